#pragma once

#include <map>
#include <string>

#include "superlim/cumulant.hpp"
#include "superlim/io.hpp"

inline superlim::Scenario scenario(const std::string& name) {
  return superlim::load_scenario(std::string(SUPERLIM_SCENARIO_DIR) + "/" + name + ".json");
}

inline const superlim::ModelSolution& solution(const std::string& name) {
  static std::map<std::string, superlim::ModelSolution> cache;
  auto it = cache.find(name);
  if (it == cache.end()) it = cache.emplace(name, superlim::solve_model(scenario(name))).first;
  return it->second;
}

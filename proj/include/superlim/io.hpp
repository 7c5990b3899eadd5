#pragma once

// Scenario JSON and sample-batch CSV/JSON persistence.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "superlim/error.hpp"
#include "superlim/model.hpp"
#include "superlim/skeleton.hpp"

namespace superlim {

using Json = nlohmann::json;

namespace detail {

inline Vector json_vector(const Json& j, const char* field) {
  if (!j.is_array()) throw InputError(std::string(field) + ": expected an array of numbers");
  Vector out(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw InputError(std::string(field) + ": expected numbers");
    out[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return out;
}

inline const Json& require(const Json& doc, const char* field) {
  if (!doc.contains(field)) throw InputError(std::string("missing field \"") + field + "\"");
  return doc.at(field);
}

inline Json vector_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

}  // namespace detail

inline Json matrix_json(const Matrix& m) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(detail::vector_json(m.row(i).transpose()));
  return out;
}

inline Json vector_json(const Vector& v) { return detail::vector_json(v); }

inline Scenario scenario_from_json(const Json& doc) {
  if (!doc.is_object()) throw InputError("scenario: expected a JSON object");
  const std::string name = detail::require(doc, "name").get<std::string>();
  const Vector m = detail::json_vector(detail::require(doc, "m"), "m");
  const Json& qj = detail::require(doc, "Q");
  if (!qj.is_array()) throw InputError("Q: expected an array of rows");
  Matrix q(static_cast<Eigen::Index>(qj.size()), m.size());
  for (std::size_t i = 0; i < qj.size(); ++i) {
    const Vector row = detail::json_vector(qj[i], "Q");
    if (row.size() != m.size())
      throw InputError("Q: row " + std::to_string(i) + " has " + std::to_string(row.size()) +
                       " entries, expected " + std::to_string(m.size()));
    q.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  const Vector alpha = detail::json_vector(detail::require(doc, "alpha"), "alpha");
  const Vector beta = detail::json_vector(detail::require(doc, "beta"), "beta");
  const Vector mu = detail::json_vector(detail::require(doc, "mu"), "mu");

  std::vector<std::vector<Atom>> atoms;
  if (doc.contains("atoms")) {
    const Json& aj = doc.at("atoms");
    if (!aj.is_array()) throw InputError("atoms: expected one list per site");
    for (const Json& site : aj) {
      if (!site.is_array()) throw InputError("atoms: expected one list per site");
      std::vector<Atom> list;
      for (const Json& a : site) {
        if (!a.is_object() || !a.contains("r") || !a.contains("w") || !a["r"].is_number() ||
            !a["w"].is_number())
          throw InputError("atoms: each atom needs numeric fields r and w");
        list.push_back({a["r"].get<double>(), a["w"].get<double>()});
      }
      atoms.push_back(std::move(list));
    }
  }

  std::optional<TailDescriptor> tail;
  if (doc.contains("tail") && !doc.at("tail").is_null()) {
    const Json& tj = doc.at("tail");
    TailDescriptor t;
    t.form = tj.value("form", std::string("log-heavy"));
    t.c = detail::require(tj, "c").get<double>();
    t.power = tj.value("power", 2.0);
    t.log_power = detail::require(tj, "log_power").get<double>();
    t.cutoff = detail::require(tj, "cutoff").get<double>();
    tail = t;
  }
  return make_scenario(name, m, q, alpha, beta, std::move(atoms), mu, tail);
}

inline Json scenario_to_json(const Scenario& s) {
  Json doc;
  doc["name"] = s.name;
  doc["m"] = vector_json(s.m());
  doc["Q"] = matrix_json(s.Q());
  doc["alpha"] = vector_json(s.alpha());
  doc["beta"] = vector_json(s.beta());
  Json atoms = Json::array();
  for (int x = 0; x < s.sites(); ++x) {
    Json list = Json::array();
    for (const Atom& a : s.atoms(x)) list.push_back({{"r", a.r}, {"w", a.w}});
    atoms.push_back(list);
  }
  doc["atoms"] = atoms;
  if (s.branching.tail) {
    const TailDescriptor& t = *s.branching.tail;
    doc["tail"] = {{"form", t.form}, {"c", t.c}, {"power", t.power}, {"log_power", t.log_power},
                   {"cutoff", t.cutoff}};
  }
  doc["mu"] = vector_json(s.initial_measure);
  return doc;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("file not found: " + path.string());
  Json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("parse error in " + path.string() + ": " + e.what());
  }
  try {
    return scenario_from_json(doc);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed scenario " + path.string() + ": " + e.what());
  }
}

inline void save_scenario(const Scenario& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << scenario_to_json(s).dump(2) << '\n';
}

/// FNV-1a over the canonical JSON text of the scenario.
inline std::uint64_t scenario_hash(const Scenario& s) {
  const std::string text = scenario_to_json(s).dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Batches

inline Json batch_metadata(const SampleBatch& b) {
  return {{"scenario", b.scenario_name},
          {"kind", kind_name(b.kind)},
          {"horizon_T", b.horizon_T},
          {"seed", b.seed},
          {"continuation_threshold", b.continuation_threshold},
          {"start_site", b.start_site},
          {"samples", b.values.size()}};
}

/// One value per row with a commented metadata header. Values are written
/// with 17 significant digits so a reload is exact.
inline void write_batch_csv(const SampleBatch& b, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "# " << batch_metadata(b).dump() << '\n';
  const bool with_aux = !b.ancestors.empty();
  out << (with_aux ? (b.kind == SampleKind::W ? "value,terms\n" : "value,ancestor\n") : "value\n");
  char buf[64];
  for (std::size_t i = 0; i < b.values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", b.values[i]);
    out << buf;
    if (with_aux) out << ',' << b.ancestors[i];
    out << '\n';
  }
}

inline SampleBatch read_batch_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("file not found: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0)
    throw InputError(path.string() + ": missing metadata header");
  Json meta;
  try {
    meta = Json::parse(line.substr(2));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + ": bad metadata header: " + e.what());
  }
  SampleBatch b;
  b.scenario_name = meta.value("scenario", std::string());
  const std::string kind = meta.value("kind", std::string("W"));
  b.kind = kind == "WZ" ? SampleKind::WZ : kind == "Y" ? SampleKind::Y : SampleKind::W;
  b.horizon_T = meta.value("horizon_T", 0.0);
  b.seed = meta.value("seed", std::uint64_t{0});
  b.continuation_threshold = meta.value("continuation_threshold", std::uint64_t{0});
  b.start_site = meta.value("start_site", -1);
  std::getline(in, line);  // column header
  const bool with_aux = line.find(',') != std::string::npos;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    try {
      b.values.push_back(std::stod(line.substr(0, comma)));
      if (with_aux) b.ancestors.push_back(std::stoi(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw InputError(path.string() + ": bad row \"" + line + "\"");
    }
  }
  return b;
}

inline void write_json(const Json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("file not found: " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("parse error in " + path.string() + ": " + e.what());
  }
}

}  // namespace superlim

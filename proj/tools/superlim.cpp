#include <string>
#include <vector>

#include "superlim/cli.hpp"

int main(int argc, char** argv) {
  return superlim::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}

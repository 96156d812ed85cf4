#pragma once

#include <stdexcept>
#include <string>

namespace panelcf {

// Invalid or inconsistent input data (bad CSV, broken preconditions).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad configuration (flag combinations, grids, fold counts).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace panelcf

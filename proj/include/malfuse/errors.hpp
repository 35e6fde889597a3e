#pragma once

#include <stdexcept>
#include <string>

namespace malfuse {

// Error categories map onto CLI exit codes: ConfigError -> 1,
// DataError -> 2, InternalError -> 3.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InternalError : std::runtime_error {
  explicit InternalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace malfuse

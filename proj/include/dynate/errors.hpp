#ifndef DYNATE_ERRORS_HPP
#define DYNATE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace dynate {

// Bad options or flags (CLI exit code 2).
class config_error : public std::runtime_error {
 public:
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input data: missing columns, ragged rows, non-binary treatments
// (CLI exit code 2).
class schema_error : public std::runtime_error {
 public:
  explicit schema_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Estimation cannot proceed: subgroup guards, degenerate responses
// (CLI exit code 3).
class estimation_error : public std::runtime_error {
 public:
  explicit estimation_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dynate

#endif  // DYNATE_ERRORS_HPP

// Exception types shared across the library.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rawsim {

// Shape or size disagreement between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Argument outside its documented domain.
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Not enough usable data left to fit anything (all pixels masked, empty pair set).
struct DegenerateDataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operation invoked in a state it cannot handle (e.g. optimizer step without gradients).
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite value where a finite one is required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed on-disk data. `offset` is the byte position at which parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace rawsim

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lumafuse {

// Malformed file bytes. offset() is the position where parsing gave up.
class FormatError : public std::runtime_error {
public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

private:
  std::size_t offset_;
};

// A hyperparameter outside its admissible range.
class ParameterError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Tensor/image extents that do not fit together.
class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace lumafuse

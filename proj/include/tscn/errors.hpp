#pragma once

#include <stdexcept>
#include <string>

namespace tscn {

/// Malformed input, violated invariant or inconsistent arguments.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing file, unreadable or unwritable path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tscn

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tscn {

inline constexpr const char* kVersion = "tscn 1.0.0";

/// Command-line entry point. `args[0]` is the program name.
/// Exit status: 0 success, 1 validation error, 2 I/O error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tscn

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace easyphoto::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kInternalError = 1;
inline constexpr int kUserError = 2;

/// Runs one command line (args[0] is the program name). Diagnostics go to `err`;
/// results go to `out`, as a single JSON document when --json is given.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace easyphoto::cli

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace flipkit {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Runs one `flipkit` subcommand. `args` excludes the program name. Machine
/// output (JSON) goes to `out` or to --out; tables and progress go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace flipkit

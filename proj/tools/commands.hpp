#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tracetrust::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command. `args` excludes the program name. Exit codes:
/// 0 success, 1 partial failure (some sweep keys failed), 2 usage, config
/// or input error. Nothing is written to --out unless the command's inputs
/// validated.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tracetrust::cli

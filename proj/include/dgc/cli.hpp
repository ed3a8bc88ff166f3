#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dgc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;    // bad arguments or configuration
inline constexpr int kExitRuntime = 2;  // the run itself failed

/// Runs one subcommand (train, eval, sweep, simulate). `args` excludes the
/// program name. Progress and summaries go to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Replaces characters outside [A-Za-z0-9._-] with '_'.
std::string sanitize_label(const std::string& label);

}  // namespace dgc::cli

#pragma once

#include <string>
#include <vector>

namespace debiaslab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitConfig = 3;

// Entry point behind the binary: parses argv, dispatches the subcommand,
// returns the process exit code. Never throws.
int dispatch(const std::vector<std::string>& args);

} // namespace debiaslab::cli

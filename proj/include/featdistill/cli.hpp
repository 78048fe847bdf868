#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace featdistill::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumerical = 3;

/// Runs one subcommand. `args` excludes the program name. Usage text and
/// diagnostics go to `err`, progress lines and help to `out`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace featdistill::cli

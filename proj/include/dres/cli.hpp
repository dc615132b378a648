#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dres::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitViolations = 1;
inline constexpr int kExitError = 2;

struct CommandOutcome {
  int exit_code = kExitOk;
  std::string summary;
  std::vector<std::string> artifacts;
};

/// Runs one subcommand. `args` excludes the program name. Human output goes to `out`,
/// diagnostics and usage text to `err`.
CommandOutcome dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dres::cli

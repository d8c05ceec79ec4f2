#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace geoedit {

/// Process exit codes of the geoedit tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitBelowThreshold = 1,
  kExitConfig = 2,
  kExitMissingInit = 3,
  kExitIncompatibleCheckpoint = 4,
  kExitEmptyTarget = 5,
  kExitMissingOutput = 6,
  kExitIo = 7,
  kExitNonFinite = 8,
  kExitInternal = 9,
};

/// Named sub-stream of a root seed ("data", "init", "train", "sample").
std::uint64_t derive_seed(std::uint64_t root, const std::string& stream);

/// Output root: the explicit value, else $GEOEDIT_OUT, else "geoedit_out".
std::filesystem::path resolve_out_root(const std::string& explicit_out);

/// Runs one invocation; args exclude the program name. Machine-readable
/// results go to out, diagnostics to err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace geoedit

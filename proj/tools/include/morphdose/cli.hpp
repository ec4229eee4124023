#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace morphdose::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kMissingArtifact = 3,
  kNumericFailure = 4,
};

inline constexpr const char* kManifestSchema = "morphdose-manifest v1";

/// Runs the command line `args` (args[0] is the program name) and returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace morphdose::cli

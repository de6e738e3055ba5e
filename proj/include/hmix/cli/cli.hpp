#pragma once

// The `hmix` command line: mix, serve, analyze, fit, train, compare, export, simulate.

#include <iosfwd>
#include <string>
#include <vector>

namespace hmix {

enum ExitCode : int {
  kExitOk = 0,
  kExitGeneric = 1,
  kExitUsage = 2,
  kExitMissingFile = 3,
  kExitSchema = 4,
  kExitValidation = 5,
  kExitTraining = 6,
};

// `args` excludes the program name. Relative --out paths resolve under $HMIX_OUTPUT_ROOT when set.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hmix

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace aeq::cli {

enum ExitCode : int {
  kOk = 0,
  kInputError = 1,
  kNumericalFailure = 2,
};

/// Runs one command. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace aeq::cli

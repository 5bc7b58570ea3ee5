#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vnn::cli {

enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,
  kConfigError = 2,
  kDataError = 3,
  kNumericError = 4,
};

/// Runs the command line. args excludes the program name. Artifacts go to
/// files or out; logs go to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vnn::cli

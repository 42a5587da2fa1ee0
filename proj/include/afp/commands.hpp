#pragma once

#include <exception>
#include <ostream>
#include <string>
#include <vector>

namespace afp::cli {

enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,
  kUsage = 2,
  kIo = 3,
  kNumeric = 4,
  kCorrupt = 5,
};

/// Maps a library exception onto the documented exit codes.
int exit_code_for(const std::exception& e);

/// Entry point shared by the executable, the tests and the Python module.
/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace afp::cli

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lrm::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

/// Parses args (without the program name) and runs the selected command.
/// Messages go to out/err; never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lrm::cli

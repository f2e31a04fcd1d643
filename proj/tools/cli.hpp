// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace hindsight::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kCheckFailed = 3 };

/// Runs one subcommand. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hindsight::cli

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "omenn/error.hpp"

namespace omenn::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kIo = 2, kCapability = 3, kIntegrity = 4 };

/// Exit code for a library error.
int exit_code(ErrorCode code) noexcept;

/// Runs one invocation. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace omenn::cli

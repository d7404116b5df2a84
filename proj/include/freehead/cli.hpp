#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace freehead {

enum ExitCode : int { kExitOk = 0, kExitValidation = 2, kExitRuntime = 3 };

/// Runs one `freehead` command line (args exclude the program name).
/// Results go to `out`, progress and errors to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace freehead

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace rsnet {

// Exit codes of the command line tool.
enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2, kExitData = 3, kExitNumeric = 4 };

// Runs one `rsnet` invocation; args excludes the program name. Normal output
// goes to `out`, diagnostics and progress to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Digest of the library sources, fixed at configure time.
std::string source_digest();

}  // namespace rsnet

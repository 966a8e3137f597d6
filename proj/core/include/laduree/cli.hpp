#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace laduree {

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitValidation = 1,
  kExitRuntime = 2,
  kExitCorrupt = 3,
};

/// Runs one `laduree` command. JSON-lines events go to `out`, human
/// readable errors to `err`. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace laduree

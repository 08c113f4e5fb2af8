#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hfnet {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitIo = 3, kExitNumeric = 4 };

/// Runs one `hfnet` command. args excludes the program name. Results go to
/// `out`, diagnostics and progress to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hfnet

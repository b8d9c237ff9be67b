#pragma once

#include <ostream>

namespace dpanet {

/// Exit codes of run_cli.
enum ExitCode : int { exit_ok = 0, exit_runtime = 1, exit_config = 2 };

/// The `dpanet` command line: gen-data, train, eval, infer, gradcheck.
/// Settings resolve as defaults < --config file < flags; any config key
/// may be given as --key=value. Output goes to `out`, diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dpanet

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "fdcnet/evaluation.hpp"

namespace fdcnet {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitValidation = 2, kExitRuntime = 3 };

/// Subcommands: train, eval, report, make-synthetic, selfcheck.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Per-task table followed by the Acc_avg and Acc_last rows.
std::string format_report(const IncrementalReport& report);

}  // namespace fdcnet

#pragma once

#include <string>
#include <vector>

namespace panelcf {

// Exit codes: 0 success, 2 data error, 64 usage error, 70 internal error.
// Runs one subcommand (validate, cv, estimate, bootstrap, report, simulate,
// compare); errors emit a machine-readable JSON line on stderr.
int run_cli(const std::vector<std::string>& args);

}  // namespace panelcf

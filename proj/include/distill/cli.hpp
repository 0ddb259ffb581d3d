#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace distill::cli {

// Run the workbench CLI in-process. `args` excludes the program name.
// Returns the process exit code: 0 on success, 1 on a runtime failure
// (machine-readable error JSON on `err`), 2 on a flag-parsing failure.
// Subcommands: make-model, generate, compare, cost, select-debug,
// synth-needle. Every flag can also come from an environment variable
// named DISTILL_<FLAG>; explicit flags win.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace distill::cli

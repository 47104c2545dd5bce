#pragma once

// The `wmf` command line: synth, make-assets, train, infer, eval,
// gradcheck. Kept in the library so tests can drive it in-process.

#include <ostream>
#include <string>
#include <vector>

namespace wmf {

// `args` excludes the program name. Returns the process exit code; failures
// print one line `error: <kind>: <message>` to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace wmf

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace seqrec::cli {

/// Parses `args` (without the program name) and runs one subcommand.
/// Exit codes: 0 success, 1 runtime failure, 2 usage error. Failures end
/// with a single "error: <message>" line on `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace seqrec::cli

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace gridlearn::cli {

/// Runs one subcommand. `args` excludes the program name. Returns the exit
/// code; on failure a one-line error JSON goes to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gridlearn::cli

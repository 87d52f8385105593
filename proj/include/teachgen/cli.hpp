#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace teachgen {

/// Runs the command-line tool on `args` (without the program name).
/// Returns 0 on success, 1 on a runtime failure (one line on `err`) and 2 on
/// a usage error (usage text on `err`).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace teachgen

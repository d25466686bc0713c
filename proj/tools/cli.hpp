#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace godp::cli {

// Runs one command line (args excludes the program name). Exit codes:
// 0 success, 1 usage or configuration error, 2 data, model or check failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Subcommand names in help order.
std::vector<std::string> subcommands();

// Long flags a subcommand accepts, e.g. "--config".
std::vector<std::string> flags_of(const std::string& subcommand);

}  // namespace godp::cli

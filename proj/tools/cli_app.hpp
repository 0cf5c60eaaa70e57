#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace salfau {

// Runs one command line (args excludes the program name). Returns the exit
// code: 0 success, 1 runtime or data error, 2 usage or configuration error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace salfau

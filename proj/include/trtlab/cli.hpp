#pragma once

#include <iostream>
#include <ostream>
#include <string>
#include <vector>

namespace trtlab {

// Parses and executes one command line (program name omitted). Table output
// goes to `out`, error messages to stderr. Returns the process exit code:
// 0 success, 2 usage error, 3 data error, 4 numeric error.
int run_cli(const std::vector<std::string> & args, std::ostream & out = std::cout);

} // namespace trtlab

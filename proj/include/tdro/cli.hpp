#pragma once

#include <string>
#include <vector>

namespace tdro {

// Full command-line entry point. Returns the process exit code:
// 0 success, 1 runtime failure, 2 usage error.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args without argv[0]

}  // namespace tdro

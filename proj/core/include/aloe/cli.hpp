#pragma once

#include <string>
#include <vector>

namespace aloe::cli {

// Exit codes: 0 success, 1 usage or configuration error, 2 numerical or
// oracle failure.
int run(const std::vector<std::string>& args);
int run_main(int argc, char** argv);

}  // namespace aloe::cli

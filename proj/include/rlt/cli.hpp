#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rlt {

// Exit codes: 0 success, 2 usage/config, 3 data/format, 4 numeric abort.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace rlt

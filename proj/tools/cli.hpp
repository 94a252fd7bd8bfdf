#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace spd::cli {

/// Exit codes: 0 success, 1 runtime failure, 2 bad flag or config.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace spd::cli

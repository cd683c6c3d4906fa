#pragma once

#include <string>
#include <vector>

namespace stockpot::cli {

// Entry point behind the stockpot binary. `args` excludes the program
// name. Exit codes: 0 success, 1 usage error, 2 schema/format error,
// 3 numeric/property failure.
int run(const std::vector<std::string>& args);

}  // namespace stockpot::cli

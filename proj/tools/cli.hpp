#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace rvlad::cli {

// Exit codes: 0 success, 1 internal error, 2 user or configuration error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUser = 2;

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rvlad::cli

#pragma once

#include <string>
#include <vector>

namespace rotinv::cli {

// Entry point for the command-line tool. Returns 0 on success, 1 when a
// verification suite fails, 2 on usage or configuration errors.
int run(const std::vector<std::string>& args);

}  // namespace rotinv::cli

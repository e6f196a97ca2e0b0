#pragma once

#include <string>
#include <vector>

namespace dim3d::cli {

// Entry point shared by the dim3d binary and the in-process tests.
// args excludes the program name. Returns 0 on success, 2 on usage errors,
// 1 on runtime failures.
int run(const std::vector<std::string>& args);

}  // namespace dim3d::cli

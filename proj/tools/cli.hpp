#pragma once

#include <string>
#include <vector>

namespace crackseg::cli {

/// Entry point shared by the binary and the tests. `args` excludes the
/// program name. Returns the process exit status.
int run(const std::vector<std::string>& args);

}  // namespace crackseg::cli

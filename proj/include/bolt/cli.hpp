#pragma once

#include <string>
#include <vector>

namespace bolt {

/// Entry point for the `bolt` command line. `args` excludes the program name.
/// Returns 0 on success, 1 on validation/usage errors, 2 on numeric errors.
int run(const std::vector<std::string>& args);

} // namespace bolt

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace keyforge::cli {

/// Runs one keyforge invocation. `args` excludes the program name.
/// Returns 0 on success, 1 on a module error, 2 on a usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace keyforge::cli

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace periscope {

// Command-line front end. Subcommands: prep, extract, features, score,
// fuse-train, fuse-apply, eval, sweep, grid, report.
// Returns 0 on success, 1 on a data error and 2 on a usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Same as above; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace periscope

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mmn::cli {

// Runs one `mmn` command. `args` excludes the program name. Returns the
// process exit code: 0 on success, 1 when the command failed, 2 on bad usage.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace mmn::cli

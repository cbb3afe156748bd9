#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lidarcount {

/// Runs one subcommand. args excludes the program name. Returns 0 on success,
/// 1 on usage or precondition errors, 2 on data, I/O or training errors.
int run_command(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);
int run_command(int argc, const char* const* argv);

}  // namespace lidarcount

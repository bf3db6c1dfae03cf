#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lsfd {

/// Entry point of the `lsfd` tool. `args` excludes the program name. Errors
/// are printed to `err` as one "E_CODE: message" line and return nonzero.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lsfd

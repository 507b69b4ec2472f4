#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace compat::cli {

inline constexpr const char* kVersion = "1.0.0";

/// Runs one subcommand. Results go to `out` (or to --out files); errors are a
/// single `code=<int> msg=<text>` line on `err`. Returns the exit code.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

struct SelftestCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

std::vector<SelftestCheck> run_selftest();

}  // namespace compat::cli

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace crfsmooth::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Parses args (without the program name) and runs one subcommand.
/// Machine-readable output goes to `out`, diagnostics to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace crfsmooth::cli

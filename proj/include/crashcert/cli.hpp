#pragma once

#include <iosfwd>

namespace crashcert {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;      ///< bad arguments or malformed input files
inline constexpr int kExitInfeasible = 2; ///< infeasible or failed certificate
inline constexpr int kExitRuntime = 3;

/// Entry point of the crashcert command line. The human summary goes to
/// `out`, diagnostics to `err`, the machine-readable report to --out.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace crashcert

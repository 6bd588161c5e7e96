#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mmfuse::expcli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Runs one `mmfuse` invocation; `args` excludes the program name. Failures
// end with a single JSON line on `err`:
//   {"error":"usage"|"runtime","message":"..."}
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mmfuse::expcli

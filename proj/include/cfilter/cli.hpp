#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cfilter::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 1;
inline constexpr int kExitNumericFault = 2;

// Entry point of the `cfctl` tool; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cfilter::cli

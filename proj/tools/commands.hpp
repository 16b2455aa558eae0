#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace fmow::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitInternal = 3;

inline constexpr std::string_view kToolVersion = "0.3.0";

/// Runs one subcommand. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fmow::cli

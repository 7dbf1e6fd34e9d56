#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lrr::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `lrr` tool. Output goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

/// Replaces (or appends) `key = value` lines of a config text.
std::string apply_overrides(const std::string& text, const std::vector<std::string>& overrides);

}  // namespace lrr::cli

#pragma once

#include <iosfwd>

namespace stan {

// Exit codes per error category.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitMalformedManifest = 3;
inline constexpr int kExitShapeMismatch = 4;
inline constexpr int kExitUnknownName = 5;
inline constexpr int kExitIo = 6;
inline constexpr int kExitInvalidConfig = 7;

// Entry point of the `stan` tool. Failures print one line
// "error: <category>: <message>" to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace stan

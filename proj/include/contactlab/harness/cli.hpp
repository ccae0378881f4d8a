#pragma once

#include <iosfwd>

namespace contactlab::harness {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;  // usage or configuration error
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

/// Runs one invocation: `<prog> <subcommand> [options]` with subcommands
/// train, eval, analyze, ablate, gen-data and geodesic, and the global
/// options --config, --seed, --out and --format.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace contactlab::harness

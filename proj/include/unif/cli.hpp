#pragma once

// Command-line entry points: generate | train | reconstruct | animate | eval.
// Exposed as a library function so tests can drive the commands in-process.

namespace unif {

/// Returns the process exit code: 0 success, 1 user error, 2 internal error.
int run_cli(int argc, const char* const* argv);

}  // namespace unif

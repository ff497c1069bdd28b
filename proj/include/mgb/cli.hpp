#pragma once

namespace mgb {

// Entry point of the command-line driver. Returns the process exit code:
// 0 success, 2 configuration error, 3 ingestion error, 4 numeric failure.
int run_cli(int argc, const char* const* argv);

}  // namespace mgb

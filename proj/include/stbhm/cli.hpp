#pragma once

// Command-line front end: simulate | fit | predict | summarize | validate.
// Exit codes: 0 success or --help, 1 usage error, 2 numerical failure.

#include <string>
#include <vector>

namespace stbhm {

/// Thread count for the parallel kernels, read from this variable when set.
inline constexpr const char* kThreadsEnv = "STBHM_THREADS";

int cli_entry(int argc, char** argv);
int cli_entry(const std::vector<std::string>& args);

}  // namespace stbhm

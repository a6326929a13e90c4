#pragma once

#include <string>
#include <vector>

namespace aoda::cli {

/// Process exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 2;  // bad arguments, config or inputs
inline constexpr int kAbort = 3;  // runtime failure after a valid start

/// Entry point of the `aoda` tool: train, evaluate, synthesize, extract-sketch, serve, dump-pool.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace aoda::cli

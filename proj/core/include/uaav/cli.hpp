#pragma once

namespace uaav::cli {

// Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 simulation failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitSolverError = 3;
inline constexpr int kExitSimError = 4;

int run(int argc, char** argv);

}  // namespace uaav::cli

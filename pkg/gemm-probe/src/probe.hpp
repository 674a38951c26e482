// Argument parsing, exact FLOP accounting, and result-line formatting for
// the GEMM probe. Kept free of any GPU dependency so it can be unit tested
// on machines without a CUDA runtime.
#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace gemm_probe {

// Process exit codes. Anything a caller scripts against lives here.
constexpr int kExitOk = 0;
constexpr int kExitAllocFailure = 2;
constexpr int kExitRuntimeError = 3;
constexpr int kExitBadArguments = 64;

struct Invocation {
    std::int64_t m = 0;
    std::int64_t n = 0;
    std::int64_t k = 0;
    std::int64_t iterations = 0;
    std::int64_t warmup = 0;
};

// Parses `<m> <n> <k> <iterations> <warmup>` from argv (argv[0] skipped).
// m, n, k, iterations must be >= 1; warmup must be >= 0. On failure returns
// std::nullopt and stores a human-readable reason in *error.
std::optional<Invocation> parse_args(int argc, const char* const argv[],
                                     std::string* error);

// Exact integer 2 * m * n * k * iterations. Returns std::nullopt when the
// product does not fit in 64 bits (treated as a bad-argument condition).
std::optional<std::uint64_t> exact_flops(const Invocation& inv);

// Renders the single stdout contract line:
//   GEMM_RESULT flops=<integer> elapsed_s=<decimal>
std::string format_result(std::uint64_t flops, double elapsed_s);

}  // namespace gemm_probe

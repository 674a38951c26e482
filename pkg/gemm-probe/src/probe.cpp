#include "probe.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace gemm_probe {

namespace {

bool parse_int64(const char* text, std::int64_t* out) {
    if (text == nullptr || *text == '\0') return false;
    errno = 0;
    char* end = nullptr;
    long long value = std::strtoll(text, &end, 10);
    if (errno != 0 || end == text || *end != '\0') return false;
    *out = static_cast<std::int64_t>(value);
    return true;
}

// a * b with unsigned 64-bit overflow detection.
bool checked_mul(std::uint64_t a, std::uint64_t b, std::uint64_t* out) {
    if (a != 0 && b > UINT64_MAX / a) return false;
    *out = a * b;
    return true;
}

}  // namespace

std::optional<Invocation> parse_args(int argc, const char* const argv[],
                                     std::string* error) {
    if (argc != 6) {
        *error = "usage: gemm-probe <m> <n> <k> <iterations> <warmup>";
        return std::nullopt;
    }
    Invocation inv;
    struct Field {
        const char* name;
        std::int64_t* slot;
        std::int64_t min;
    };
    const Field fields[] = {
        {"m", &inv.m, 1},          {"n", &inv.n, 1},
        {"k", &inv.k, 1},          {"iterations", &inv.iterations, 1},
        {"warmup", &inv.warmup, 0},
    };
    for (int i = 0; i < 5; ++i) {
        if (!parse_int64(argv[i + 1], fields[i].slot)) {
            *error = std::string(fields[i].name) + " is not an integer: " +
                     argv[i + 1];
            return std::nullopt;
        }
        if (*fields[i].slot < fields[i].min) {
            *error = std::string(fields[i].name) + " must be >= " +
                     std::to_string(fields[i].min) + ", got " + argv[i + 1];
            return std::nullopt;
        }
    }
    return inv;
}

std::optional<std::uint64_t> exact_flops(const Invocation& inv) {
    std::uint64_t product = 2;
    for (std::int64_t dim : {inv.m, inv.n, inv.k, inv.iterations}) {
        if (!checked_mul(product, static_cast<std::uint64_t>(dim), &product)) {
            return std::nullopt;
        }
    }
    return product;
}

std::string format_result(std::uint64_t flops, double elapsed_s) {
    char buffer[128];
    std::snprintf(buffer, sizeof(buffer),
                  "GEMM_RESULT flops=%llu elapsed_s=%.9f",
                  static_cast<unsigned long long>(flops), elapsed_s);
    return buffer;
}

}  // namespace gemm_probe

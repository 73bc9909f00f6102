#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace lf {

// Error taxonomy shared by the library and the CLI exit codes:
// IoError -> 1, SpecError -> 2, NumericError -> 3.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

class SpecError : public std::runtime_error {
public:
    explicit SpecError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Deterministic random source: mt19937_64 underneath (bit-exact by the
// standard), explicit Box-Muller on top so the Gaussian stream does not
// depend on the standard library's normal_distribution implementation.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in (0, 1], 53-bit resolution.
    double next_uniform() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    double next_gaussian();

    // Uniform integer in [0, n), n >= 1. Rejection-free modulo is fine here:
    // n is always tiny compared to 2^64 so the bias is unobservable.
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a 64-bit, used for input hashes in run manifests.
uint64_t fnv1a64(const void* data, size_t len);
std::string fnv1a64_hex(const std::vector<uint8_t>& bytes);

// Worker cap from LAYOUTFUSE_THREADS (0 or unset = hardware concurrency).
int thread_cap();

// Runs fn(i) for i in [0, n). Each index must write to disjoint state so the
// result is identical for any thread count.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace lf

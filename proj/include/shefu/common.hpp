#pragma once

#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace shefu {

// Error taxonomy. Everything derives from std::runtime_error so callers that
// do not care about the category can catch one type.
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric-input error: " + msg) {}
};
struct PoolingUnderflowError : std::runtime_error {
    explicit PoolingUnderflowError(const std::string& msg)
        : std::runtime_error("pooling-underflow error: " + msg) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error("parse error: " + msg) {}
};
struct SchemaError : std::runtime_error {
    explicit SchemaError(const std::string& msg) : std::runtime_error("schema error: " + msg) {}
};
struct SamplingExhaustedError : std::runtime_error {
    explicit SamplingExhaustedError(const std::string& msg)
        : std::runtime_error("sampling-exhausted error: " + msg) {}
};
struct TrainingDiverged : std::runtime_error {
    explicit TrainingDiverged(const std::string& msg)
        : std::runtime_error("training diverged: " + msg) {}
};
struct ArtifactMismatch : std::runtime_error {
    explicit ArtifactMismatch(const std::string& msg)
        : std::runtime_error("artifact mismatch: " + msg) {}
};

// 64-bit FNV-1a. Used for config hashes and file checksums in tests; not
// cryptographic.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}
inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

// Deterministic RNG. All randomness in the project flows through this class.
// The raw engine is splitmix64-seeded xoshiro-style mixing on top of a simple
// 64-bit state walk; distributions are hand-rolled so that streams are
// bit-identical across platforms and standard-library versions
// (std::normal_distribution et al. are implementation-defined).
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(splitmix(seed + 0x9e3779b97f4a7c15ull)) {}

    uint64_t next_u64() {
        // splitmix64 walk: simple, fast, passes the statistical tests that
        // matter at this scale.
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be > 0.
    uint64_t uniform_int(uint64_t n) {
        if (n == 0) throw ContractError("uniform_int: n must be positive");
        // modulo bias is irrelevant for the small ranges used here
        return next_u64() % n;
    }

    // Standard normal via Box-Muller (deterministic, no cached spare).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (size_t i = v.size() - 1; i > 0; --i) {
            size_t j = static_cast<size_t>(uniform_int(i + 1));
            std::swap(v[i], v[j]);
        }
    }

    // Derive an independent stream, e.g. one per scene or per worker.
    Rng fork(uint64_t salt) const {
        uint64_t h = fnv1a64(&salt, sizeof(salt), state_ ^ 0xa5a5a5a5a5a5a5a5ull);
        return Rng(h);
    }

private:
    static uint64_t splitmix(uint64_t x) {
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }
    uint64_t state_;
};

inline std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

}  // namespace shefu

#pragma once

// Shared plumbing: error taxonomy, deterministic hashing, and the
// counter-based RNG used everywhere reproducibility matters.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sifd {

inline constexpr const char* kToolVersion = "0.1.0";

// Error classes map 1:1 onto CLI exit codes (1/2/3).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BackendError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// splitmix64 finalizer. Used both as a sequential generator and as the
// mixing step when deriving stream keys.
inline uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Sequential splitmix64 stream. Not std::mt19937: the std distributions are
// implementation-defined, and every draw here must be identical on every
// platform and under every worker count.
class SplitMix {
public:
    explicit SplitMix(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ull;
        return mix64(state_);
    }

    // [0, 1)
    double next_unit() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    // [-1, 1)
    double next_symmetric() {
        return 2.0 * next_unit() - 1.0;
    }

    // Unbiased integer in [0, n) via rejection.
    uint64_t next_below(uint64_t n) {
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v = next();
        while (v >= limit) {
            v = next();
        }
        return v % n;
    }

private:
    uint64_t state_;
};

// FNV-1a 64-bit, streaming. Provenance hashing only.
class Fnv1a {
public:
    void update(std::string_view s) {
        for (unsigned char c : s) {
            feed(c);
        }
    }

    void update_u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            feed(static_cast<unsigned char>(v >> (8 * i)));
        }
    }

    void update_i32(int32_t v) {
        update_u64(static_cast<uint64_t>(static_cast<uint32_t>(v)));
    }

    uint64_t value() const { return hash_; }
    std::string hex() const;

private:
    void feed(unsigned char c) {
        hash_ ^= c;
        hash_ *= 0x100000001B3ull;
    }

    uint64_t hash_ = 0xCBF29CE484222325ull;
};

uint64_t fnv1a64(std::string_view s);
std::string to_hex(uint64_t v);

// Stream key for per-(seed, sample, index) noise draws. Chained mixing so
// nearby seeds/indices do not produce related streams.
inline uint64_t derive_stream_key(uint64_t seed, std::string_view sample_id, uint64_t index) {
    uint64_t k = mix64(seed ^ 0xA24BAED4963EE407ull);
    k = mix64(k ^ fnv1a64(sample_id));
    k = mix64(k ^ (index + 1));
    return k;
}

// Round-trip-exact decimal formatting/parsing for doubles (shortest form).
std::string format_double(double v);
double parse_double(std::string_view s, std::string_view what);

}  // namespace sifd

#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace tmsm {

// Counter-based random numbers (Philox4x32-10). Every draw is a pure
// function of (key, counter), so independent streams can be carved out per
// (purpose, unit, time, sample) and regenerated from anywhere — simulation
// of distinct cells parallelizes without shared state and results do not
// depend on thread count or evaluation order.

namespace philox {

constexpr uint32_t kMul0 = 0xD2511F53u;
constexpr uint32_t kMul1 = 0xCD9E8D57u;
constexpr uint32_t kWeyl0 = 0x9E3779B9u;
constexpr uint32_t kWeyl1 = 0xBB67AE85u;

inline std::array<uint32_t, 4> block(uint64_t key, uint64_t ctr_hi, uint64_t ctr_lo) {
    uint32_t c0 = static_cast<uint32_t>(ctr_lo);
    uint32_t c1 = static_cast<uint32_t>(ctr_lo >> 32);
    uint32_t c2 = static_cast<uint32_t>(ctr_hi);
    uint32_t c3 = static_cast<uint32_t>(ctr_hi >> 32);
    uint32_t k0 = static_cast<uint32_t>(key);
    uint32_t k1 = static_cast<uint32_t>(key >> 32);
    for (int round = 0; round < 10; ++round) {
        uint64_t p0 = static_cast<uint64_t>(kMul0) * c0;
        uint64_t p1 = static_cast<uint64_t>(kMul1) * c2;
        uint32_t h0 = static_cast<uint32_t>(p0 >> 32), l0 = static_cast<uint32_t>(p0);
        uint32_t h1 = static_cast<uint32_t>(p1 >> 32), l1 = static_cast<uint32_t>(p1);
        uint32_t n0 = h1 ^ c1 ^ k0;
        uint32_t n1 = l1;
        uint32_t n2 = h0 ^ c3 ^ k1;
        uint32_t n3 = l0;
        c0 = n0; c1 = n1; c2 = n2; c3 = n3;
        k0 += kWeyl0;
        k1 += kWeyl1;
    }
    return {c0, c1, c2, c3};
}

}  // namespace philox

// splitmix64 finalizer; used to fold stream coordinates into keys.
inline uint64_t mix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline uint64_t mix64(uint64_t a, uint64_t b) { return mix64(mix64(a) ^ b); }
inline uint64_t mix64(uint64_t a, uint64_t b, uint64_t c) { return mix64(mix64(a, b) ^ c); }

// Stream purposes; part of the key so streams never collide across uses.
enum class StreamId : uint64_t {
    covariate_z = 1,
    treatment = 2,
    outcome_noise = 3,
    true_factors = 4,
    pool_cov = 5,
    pool_treat = 6,
    fork_cov = 7,
    als_init = 8,
    generic = 9,
    sw_cov = 10,
};

class RngStream {
public:
    RngStream(uint64_t seed, StreamId id, uint64_t a = 0, uint64_t b = 0)
        : key_(mix64(seed, static_cast<uint64_t>(id))), hi_(mix64(a, b)) {}

    uint32_t next_u32() {
        if (have_ == 0) refill();
        return buf_[--have_];
    }

    uint64_t next_u64() {
        uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    // Uniform on (0,1): 53 random bits, offset so 0 is excluded.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53 + 0x1.0p-54;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; deterministic pair cache.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        double radius = std::sqrt(-2.0 * std::log(u1));
        double angle = 6.283185307179586476925286766559 * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    void refill() {
        buf_ = philox::block(key_, hi_, ctr_++);
        have_ = 4;
    }

    uint64_t key_;
    uint64_t hi_;
    uint64_t ctr_ = 0;
    std::array<uint32_t, 4> buf_{};
    int have_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace tmsm

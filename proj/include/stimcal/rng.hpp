#pragma once

#include <cmath>
#include <cstdint>

namespace stimcal {

// splitmix64: used only to expand seeds and to hash (seed, stream, index)
// tuples into statistically independent substream seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// xoshiro256++ by Blackman & Vigna. Small, fast, and fully portable, so
// identical seeds give identical streams on every build.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform on (0, 1]: never returns 0, safe as log() argument.
    double uniform_pos() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    // Uniform on [0, 1).
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double exponential(double mean) { return -mean * std::log(uniform_pos()); }

    // Symmetric two-sided exponential, scale b (mean |x| = b).
    double laplace(double scale) {
        const std::uint64_t bits = next_u64();
        const double magnitude =
            -scale * std::log((static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53);
        return (bits & 1u) ? magnitude : -magnitude;
    }

    bool bernoulli(double p) { return uniform01() < p; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t state_[4];
};

// Stream identifiers for the independent substreams used across the
// simulation. Each (master seed, stream, index) tuple seeds its own Rng, so
// any segment can be generated in isolation and in any order.
enum class StreamId : std::uint64_t {
    cluster_epochs = 1,
    cluster_jitter = 2,
    background = 3,
    thinning_arm1 = 4,
    thinning_arm2 = 5,
    charges_arm1 = 6,
    charges_arm2 = 7,
    dark_arm1 = 8,
    dark_arm2 = 9,
    bootstrap = 10,
};

inline Rng substream(std::uint64_t master_seed, StreamId stream, std::uint64_t index = 0) {
    std::uint64_t s = master_seed;
    std::uint64_t a = splitmix64(s);
    s ^= static_cast<std::uint64_t>(stream) * 0x9e3779b97f4a7c15ULL;
    std::uint64_t b = splitmix64(s);
    s ^= index * 0xd1342543de82ef95ULL;
    std::uint64_t c = splitmix64(s);
    return Rng(a ^ (b + 0x165667b19e3779f9ULL) ^ (c << 1));
}

// Order-independent per-event hash, used so that a value attached to an
// event (e.g. its avalanche charge) depends only on the event itself, not on
// how streams were merged or chunked.
inline std::uint64_t event_hash(std::uint64_t seed, std::uint64_t payload_bits) {
    std::uint64_t s = seed ^ (payload_bits * 0xff51afd7ed558ccdULL);
    return splitmix64(s);
}

}  // namespace stimcal

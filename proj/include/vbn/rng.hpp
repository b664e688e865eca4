#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace vbn {

// Deterministic random source: xoshiro256** seeded through splitmix64.
// The integer stream is identical for a given seed on every platform.
// normal() uses Box-Muller, so its low bits follow the host libm.
//
// An Rng is single-owner. Work that needs independent streams derives
// them with child(stream): child seed = splitmix64(seed ^ (stream+1)*phi)
// where phi is the 64-bit golden-ratio constant.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed) {
        uint64_t x = seed;
        for (auto& s : state_) s = splitmix64_next(x);
    }

    uint64_t seed() const { return seed_; }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // uniform in [0, 1) with 24 bits of precision
    float next_float() {
        return static_cast<float>(next_u64() >> 40) * (1.0f / 16777216.0f);
    }

    float uniform(float lo, float hi) { return lo + (hi - lo) * next_float(); }

    // index in [0, n)
    uint64_t next_index(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    // standard normal via Box-Muller; the paired value is cached
    float normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        const double u1 = 1.0 - static_cast<double>(next_float());  // (0, 1]
        const double u2 = static_cast<double>(next_float());
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        cached_ = static_cast<float>(r * std::sin(theta));
        have_cached_ = true;
        return static_cast<float>(r * std::cos(theta));
    }

    Rng child(uint64_t stream) const {
        uint64_t x = seed_ ^ ((stream + 1) * 0x9E3779B97F4A7C15ULL);
        return Rng(splitmix64_next(x));
    }

    // Fisher-Yates shuffle of an index-like container
    template <typename Vec>
    void shuffle(Vec& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(next_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static uint64_t splitmix64_next(uint64_t& x) {
        x += 0x9E3779B97F4A7C15ULL;
        uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    std::array<uint64_t, 4> state_{};
    uint64_t seed_ = 0;
    bool have_cached_ = false;
    float cached_ = 0.0f;
};

}  // namespace vbn

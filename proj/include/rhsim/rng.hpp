#pragma once

#include <cstdint>
#include <cmath>
#include <string_view>

namespace rhsim {

// splitmix64, used for seeding and for hashing labels into substream seeds.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t hash_combine(uint64_t seed, uint64_t value) {
    uint64_t s = seed ^ (value + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
    return splitmix64(s);
}

inline uint64_t hash_label(uint64_t seed, std::string_view label) {
    uint64_t h = seed;
    for (char c : label)
        h = hash_combine(h, static_cast<uint64_t>(static_cast<unsigned char>(c)));
    return h;
}

// xoshiro256** by Blackman/Vigna. Self-contained so streams are reproducible
// independent of the standard library implementation.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) {
        uint64_t sm = seed;
        for (auto& w : s_)
            w = splitmix64(sm);
    }

    // Derives an independent substream from (this seed, label). Every
    // stochastic component gets its own labelled stream.
    Rng substream(std::string_view label) const {
        return Rng(hash_label(seed_of_, label));
    }
    Rng substream(std::string_view label, uint64_t index) const {
        return Rng(hash_combine(hash_label(seed_of_, label), index));
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, bound) without modulo bias (Lemire).
    uint64_t next_below(uint64_t bound) {
        if (bound == 0) return 0;
        __uint128_t m = static_cast<__uint128_t>(next_u64()) * bound;
        auto lo = static_cast<uint64_t>(m);
        if (lo < bound) {
            const uint64_t threshold = (0 - bound) % bound;
            while (lo < threshold) {
                m = static_cast<__uint128_t>(next_u64()) * bound;
                lo = static_cast<uint64_t>(m);
            }
        }
        return static_cast<uint64_t>(m >> 64);
    }

    bool next_bool(double p) { return next_double() < p; }

    double next_exponential() {
        double u;
        do { u = next_double(); } while (u <= 0.0);
        return -std::log(u);
    }

    double next_normal();

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    double half_open_unit() {
        double u;
        do { u = next_double(); } while (u <= 0.0 || u >= 1.0);
        return u;
    }

    uint64_t s_[4] {};
    uint64_t seed_of_ = 0;

    friend Rng seeded_rng(uint64_t);
};

inline Rng seeded_rng(uint64_t seed) {
    Rng r(seed);
    r.seed_of_ = seed;
    return r;
}

// Acklam's rational approximation of the standard normal quantile.
// Pure arithmetic, so results are identical across platforms.
inline double normal_quantile(double p) {
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double p_low = 0.02425;
    double q, r;
    if (p < p_low) {
        q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (p <= 1.0 - p_low) {
        q = p - 0.5;
        r = q * q;
        return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
               (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    }
    q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
}

inline double Rng::next_normal() { return normal_quantile(half_open_unit()); }

// Standard normal CDF, used where a quantile has to be inverted or checked.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

} // namespace rhsim

#pragma once

#include <cmath>
#include <cstdint>

#include "definetti/common.hpp"

namespace definetti {

/// splitmix64; used to expand seeds and derive substream keys.
struct SplitMix64 {
    std::uint64_t state;

    std::uint64_t next() {
        std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
};

/// xoshiro256++ (Blackman/Vigna). Small, fast, and fully specified, so sample
/// matrices are bit-identical across platforms for a given seed.
class Xoshiro256pp {
public:
    explicit Xoshiro256pp(std::uint64_t seed) {
        SplitMix64 sm{seed};
        for (auto& w : s_) w = sm.next();
        if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t s_[4];
};

/// Key for the i-th substream of a master seed. Each risk column samples from
/// its own substream, so column draws are independent and column-parallel
/// sampling reproduces the sequential result.
inline std::uint64_t substream_seed(std::uint64_t master, std::uint64_t stream) {
    SplitMix64 outer{master};
    SplitMix64 inner{outer.next() + (stream + 1) * 0x9E3779B97F4A7C15ULL};
    return inner.next();
}

/// One deterministic draw stream with the distribution primitives the
/// portfolio module needs.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : eng_(seed) {}

    /// Uniform on [0, 1).
    double uniform() {
        return static_cast<double>(eng_.next() >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller; pairs are cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * M_PI * u2;
        spare_ = r * std::sin(t);
        have_spare_ = true;
        return r * std::cos(t);
    }

    /// Gamma(shape, rate) via Marsaglia-Tsang. Shapes below 1 are boosted from
    /// shape+1 with a uniform power transform.
    double gamma(double shape, double rate) {
        if (shape < 1.0) {
            const double u = uniform();
            return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x;
            double v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
        }
    }

    /// Shifted Pareto with density h t^h (x+t)^{-(h+1)} on x >= 0, sampled by
    /// inverting the CDF: x = t((1-u)^{-1/h} - 1).
    double shifted_pareto(double threshold, double tail_exponent) {
        const double u = uniform();
        return threshold * (std::pow(1.0 - u, -1.0 / tail_exponent) - 1.0);
    }

private:
    Xoshiro256pp eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace definetti

#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "definetti/contracts.hpp"
#include "definetti/portfolio.hpp"

namespace testsupport {

using definetti::Matrix;
using definetti::SampleMatrix;

/// Deterministic generator for property-test instances.
struct Gen {
    std::mt19937_64 eng;

    explicit Gen(std::uint64_t seed) : eng(seed) {}

    double real(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(eng);
    }
    std::size_t index(std::size_t lo, std::size_t hi) {  // inclusive
        return std::uniform_int_distribution<std::size_t>(lo, hi)(eng);
    }

    /// Random uniform-weight matrix with nonnegative losses.
    SampleMatrix matrix(std::size_t m, std::size_t n, double scale = 3.0) {
        Matrix d(m, n);
        for (auto& v : d.data) v = real(0.0, scale);
        return SampleMatrix::uniform(std::move(d));
    }

    /// As above, with random weights normalized to sum 1.
    SampleMatrix weighted_matrix(std::size_t m, std::size_t n, double scale = 3.0) {
        SampleMatrix x = matrix(m, n, scale);
        double total = 0.0;
        for (auto& w : x.weights) {
            w = real(0.1, 1.0);
            total += w;
        }
        for (auto& w : x.weights) w /= total;
        return x;
    }

    std::vector<double> loadings(std::size_t n, double lo = 0.05, double hi = 0.4) {
        std::vector<double> b(n);
        for (auto& v : b) v = real(lo, hi);
        return b;
    }

    /// Samplewise-uniform feasible contract payout in [0, X].
    Matrix feasible_payout(const SampleMatrix& x) {
        Matrix r(x.samples(), x.risks());
        for (std::size_t s = 0; s < x.samples(); ++s) {
            for (std::size_t i = 0; i < x.risks(); ++i) r(s, i) = real(0.0, 1.0) * x.data(s, i);
        }
        return r;
    }
};

/// The two-atom instance used throughout: X = (0, 2) uniform, beta = 0.1.
inline SampleMatrix two_atom() {
    Matrix d(2, 1);
    d(0, 0) = 0.0;
    d(1, 0) = 2.0;
    return SampleMatrix::uniform(std::move(d));
}

/// The five-atom CVaR/VaR toy: X = (0,1,2,3,4) uniform, single risk.
inline SampleMatrix five_atom() {
    Matrix d(5, 1);
    for (std::size_t s = 0; s < 5; ++s) d(s, 0) = static_cast<double>(s);
    return SampleMatrix::uniform(std::move(d));
}

}  // namespace testsupport

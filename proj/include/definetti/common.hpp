#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace definetti {

/// Bad parameters / bad configuration (CLI exit code 1).
class config_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad input data: malformed or invalid sample files, infeasible contracts (exit code 2).
class data_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A root-finder failed to converge or detected an inconsistent curve (exit code 3).
class solver_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline double clip(double x, double lo, double hi) {
    return std::min(std::max(x, lo), hi);
}

inline double pos_part(double x) { return x > 0.0 ? x : 0.0; }

/// Compensated (Neumaier) accumulator. Used wherever a mean feeds a
/// root-finder so that results do not depend on incidental evaluation order.
struct NeumaierSum {
    double sum = 0.0;
    double comp = 0.0;

    void add(double x) {
        const double t = sum + x;
        if (std::abs(sum) >= std::abs(x)) {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }

    double value() const { return sum + comp; }
};

/// Dense row-major matrix of doubles. Rows are samples, columns are risks.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    const double* row(std::size_t r) const { return data.data() + r * cols; }
    double* row(std::size_t r) { return data.data() + r * cols; }
};

/// Worker cap: DEFINETTI_THREADS if set, otherwise the hardware count.
inline int max_threads() {
    if (const char* env = std::getenv("DEFINETTI_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
}

/// Sum of term(i) for i in [0, n) over a fixed chunk partition: each chunk is
/// accumulated with compensation and the partials are merged in chunk order,
/// so the value is identical for any worker count.
template <class Term>
double deterministic_sum(std::size_t n, Term&& term, std::size_t chunk = std::size_t{1} << 16) {
    if (n == 0) return 0.0;
    const std::size_t nchunks = (n + chunk - 1) / chunk;
    std::vector<double> partial(nchunks, 0.0);

    auto run_chunk = [&](std::size_t b) {
        NeumaierSum s;
        const std::size_t lo = b * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        for (std::size_t i = lo; i < hi; ++i) s.add(term(i));
        partial[b] = s.value();
    };

    const int workers = static_cast<int>(
        std::min<std::size_t>(static_cast<std::size_t>(max_threads()), nchunks));
    if (workers <= 1) {
        for (std::size_t b = 0; b < nchunks; ++b) run_chunk(b);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w]() {
                for (std::size_t b = static_cast<std::size_t>(w); b < nchunks;
                     b += static_cast<std::size_t>(workers)) {
                    run_chunk(b);
                }
            });
        }
        for (auto& t : pool) t.join();
    }

    NeumaierSum total;
    for (std::size_t b = 0; b < nchunks; ++b) total.add(partial[b]);
    return total.value();
}

}  // namespace definetti

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "definetti/common.hpp"
#include "definetti/contracts.hpp"
#include "definetti/empirical.hpp"
#include "definetti/portfolio.hpp"
#include "definetti/rng.hpp"

namespace definetti {

/// Brute-force verification result. The contract is the raw decision matrix
/// of the iterative method, feasible by projection.
struct OracleResult {
    double objective = std::numeric_limits<double>::infinity();
    Matrix contract;
    int iterations = 0;
    double final_step = 0.0;
    double kkt_residual = 0.0;
    bool converged = false;
};

namespace detail {

inline void check_oracle_size(const SampleMatrix& x) {
    if (x.samples() * x.risks() > 100000)
        throw config_error("instance too large for brute-force verification (m*n > 1e5)");
}

inline std::vector<double> row_sums(const SampleMatrix& x) {
    std::vector<double> s(x.samples());
    for (std::size_t r = 0; r < x.samples(); ++r) {
        double acc = 0.0;
        for (std::size_t i = 0; i < x.risks(); ++i) acc += x.data(r, i);
        s[r] = acc;
    }
    return s;
}

}  // namespace detail

/// Solves the penalized variance problem directly as a box-constrained convex
/// quadratic over the m x n payout matrix, by projected gradient with step
/// 1/L, L estimated by power iteration on the variance quadratic form.
inline OracleResult oracle_penalized_variance(const SampleMatrix& x,
                                              const std::vector<double>& loadings,
                                              double lambda, int iters = 20000,
                                              double tol = 1e-10) {
    x.validate();
    detail::check_oracle_size(x);
    if (loadings.size() != x.risks()) throw config_error("one loading per risk is required");
    if (lambda < 0.0) throw config_error("lambda must be nonnegative");

    const std::size_t m = x.samples();
    const std::size_t n = x.risks();
    const auto& w = x.weights;
    const auto s = detail::row_sums(x);

    // Power iteration on (H d)_{si} = 2 lambda w_s (u_s - E[u]), u_s = sum_i d_si.
    double lip = 0.0;
    if (lambda > 0.0) {
        RandomStream probe(0x9E3779B9ULL);
        std::vector<double> d(m * n);
        for (double& v : d) v = probe.uniform() - 0.5;
        std::vector<double> u(m);
        for (int it = 0; it < 40; ++it) {
            double ubar = 0.0;
            for (std::size_t r = 0; r < m; ++r) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) acc += d[r * n + i];
                u[r] = acc;
                ubar += w[r] * acc;
            }
            double norm2 = 0.0;
            for (std::size_t r = 0; r < m; ++r) {
                const double g = 2.0 * lambda * w[r] * (u[r] - ubar);
                for (std::size_t i = 0; i < n; ++i) {
                    d[r * n + i] = g;
                    norm2 += g * g;
                }
            }
            const double norm = std::sqrt(norm2);
            lip = norm;
            if (norm == 0.0) break;
            for (double& v : d) v /= norm;
        }
        lip *= 1.2;  // safety margin over the power-iteration estimate
    }
    const double step = 1.0 / std::max(lip, 1e-12);

    OracleResult out;
    out.contract = Matrix(m, n, 0.0);
    out.final_step = step;
    auto& r = out.contract;

    std::vector<double> z(m);
    double map_norm = std::numeric_limits<double>::infinity();
    int it = 0;
    for (; it < iters; ++it) {
        NeumaierSum zbar;
        for (std::size_t row = 0; row < m; ++row) {
            double ceded = 0.0;
            for (std::size_t i = 0; i < n; ++i) ceded += r(row, i);
            z[row] = s[row] - ceded;
            zbar.add(w[row] * z[row]);
        }
        const double ez = zbar.value();

        double delta2 = 0.0;
        for (std::size_t row = 0; row < m; ++row) {
            const double common = -2.0 * lambda * (z[row] - ez);
            for (std::size_t i = 0; i < n; ++i) {
                const double g = w[row] * (loadings[i] + common);
                const double next = clip(r(row, i) - step * g, 0.0, x.data(row, i));
                const double d = next - r(row, i);
                delta2 += d * d;
                r(row, i) = next;
            }
        }
        map_norm = std::sqrt(delta2) / step;
        if (map_norm <= tol) {
            ++it;
            out.converged = true;
            break;
        }
    }
    out.iterations = it;
    out.kkt_residual = map_norm;

    NeumaierSum zbar;
    for (std::size_t row = 0; row < m; ++row) {
        double ceded = 0.0;
        for (std::size_t i = 0; i < n; ++i) ceded += r(row, i);
        z[row] = s[row] - ceded;
        zbar.add(w[row] * z[row]);
    }
    const double ez = zbar.value();
    NeumaierSum var;
    for (std::size_t row = 0; row < m; ++row) {
        const double d = z[row] - ez;
        var.add(w[row] * d * d);
    }
    out.objective = premium(r, w, loadings) + lambda * std::max(0.0, var.value());
    return out;
}

/// Solves the penalized CVaR problem by projected subgradient on the joint
/// variables (R, q) of the variational form, with diminishing steps c/sqrt(k)
/// (scaled per variable group) and best-iterate tracking.
inline OracleResult oracle_penalized_cvar(const SampleMatrix& x,
                                          const std::vector<double>& loadings, double lambda,
                                          double alpha, int iters = 800000,
                                          double tol = 1e-7) {
    x.validate();
    detail::check_oracle_size(x);
    detail::check_alpha(alpha);
    if (loadings.size() != x.risks()) throw config_error("one loading per risk is required");
    if (lambda < 0.0) throw config_error("lambda must be nonnegative");

    const std::size_t m = x.samples();
    const std::size_t n = x.risks();
    const auto& w = x.weights;
    const auto s = detail::row_sums(x);
    const double max_s = *std::max_element(s.begin(), s.end());
    const double k_crit = lambda / (1.0 - alpha);

    Matrix r(m, n, 0.0);
    double q = 0.0;

    auto objective_at = [&](const Matrix& rr, double qq) {
        NeumaierSum hinge;
        for (std::size_t row = 0; row < m; ++row) {
            double ceded = 0.0;
            for (std::size_t i = 0; i < n; ++i) ceded += rr(row, i);
            hinge.add(w[row] * pos_part(s[row] - ceded - qq));
        }
        return premium(rr, w, loadings) + lambda * qq + k_crit * hinge.value();
    };

    OracleResult out;
    out.contract = r;
    out.objective = objective_at(r, q);

    // Group step scales: R subgradients carry a w_s factor, the q subgradient
    // does not; scale each group to its own diameter/gradient ratio.
    double wmax = 0.0;
    for (double ww : w) wmax = std::max(wmax, ww);
    double beta_max = 0.0;
    for (double b : loadings) beta_max = std::max(beta_max, b);
    const double c_r = 0.05 * std::max(1.0, max_s) /
                       std::max(1e-12, wmax * (beta_max + k_crit));
    const double c_q = 0.5 * std::max(1.0, max_s) / std::max(1e-12, lambda + k_crit);

    double best_seen = out.objective;
    double best_at_checkpoint = out.objective;
    const int checkpoint = iters - iters / 10;
    for (int it = 1; it <= iters; ++it) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(it));
        double tail_mass = 0.0;
        for (std::size_t row = 0; row < m; ++row) {
            double ceded = 0.0;
            for (std::size_t i = 0; i < n; ++i) ceded += r(row, i);
            const bool active = s[row] - ceded - q > 0.0;
            if (active) tail_mass += w[row];
            const double common = active ? -k_crit : 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double g = w[row] * (loadings[i] + common);
                r(row, i) = clip(r(row, i) - c_r * scale * g, 0.0, x.data(row, i));
            }
        }
        const double gq = lambda - k_crit * tail_mass;
        q = clip(q - c_q * scale * gq, 0.0, max_s);

        const double obj = objective_at(r, q);
        if (obj < best_seen) {
            best_seen = obj;
            out.contract = r;
            out.objective = obj;
            out.iterations = it;
        }
        if (it == checkpoint) best_at_checkpoint = best_seen;
        out.final_step = c_r * scale;
    }
    out.kkt_residual = best_at_checkpoint - best_seen;
    out.converged = out.kkt_residual <= tol * (1.0 + std::abs(best_seen));
    return out;
}

/// Exhaustive VaR verification: enumerate every coverage set of mass >= alpha
/// (plus one-atom fractional completions), pay phi on covered samples, and
/// take the minimal premium. Refuses m > 20.
inline OracleResult oracle_var_enumerate(const SampleMatrix& x,
                                         const std::vector<double>& loadings, double c,
                                         double alpha) {
    x.validate();
    detail::check_alpha(alpha);
    if (c < 0.0) throw config_error("VaR bound c must be nonnegative");
    if (x.samples() > 20)
        throw config_error("VaR enumeration refuses more than 20 samples");
    const auto ord = detail::make_risk_order(loadings);

    const std::size_t m = x.samples();
    const std::size_t n = x.risks();
    SampleMatrix sorted;
    sorted.weights = x.weights;
    sorted.data = Matrix(m, n);
    for (std::size_t s = 0; s < m; ++s) {
        for (std::size_t k = 0; k < n; ++k) sorted.data(s, k) = x.data(s, ord.perm[k]);
    }
    const Matrix phi = phi_map(sorted, c);

    std::vector<double> cost(m);
    for (std::size_t s = 0; s < m; ++s) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += ord.beta[k] * phi(s, k);
        cost[s] = acc;
    }

    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_mask = 0;
    std::size_t best_frac_sample = m;
    double best_frac = 0.0;

    const std::uint32_t masks = 1u << m;
    for (std::uint32_t mask = 0; mask < masks; ++mask) {
        double mass = 0.0;
        double prem = 0.0;
        for (std::size_t s = 0; s < m; ++s) {
            if (mask & (1u << s)) {
                mass += x.weights[s];
                prem += x.weights[s] * cost[s];
            }
        }
        if (mass >= alpha - 1e-15) {
            if (prem < best) {
                best = prem;
                best_mask = mask;
                best_frac_sample = m;
            }
        } else {
            for (std::size_t j = 0; j < m; ++j) {
                if (mask & (1u << j)) continue;
                if (mass + x.weights[j] < alpha - 1e-15 || x.weights[j] <= 0.0) continue;
                const double frac = (alpha - mass) / x.weights[j];
                const double cand = prem + frac * x.weights[j] * cost[j];
                if (cand < best) {
                    best = cand;
                    best_mask = mask;
                    best_frac_sample = j;
                    best_frac = frac;
                }
            }
        }
    }

    OracleResult out;
    out.converged = true;
    out.objective = best;
    out.contract = Matrix(m, n, 0.0);
    for (std::size_t s = 0; s < m; ++s) {
        double g = (best_mask & (1u << s)) ? 1.0 : 0.0;
        if (s == best_frac_sample) g = best_frac;
        for (std::size_t k = 0; k < n; ++k) out.contract(s, ord.perm[k]) = g * phi(s, k);
    }
    return out;
}

}  // namespace definetti

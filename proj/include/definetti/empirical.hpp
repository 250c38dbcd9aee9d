#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <utility>
#include <vector>

#include "definetti/common.hpp"

namespace definetti {

/// A weighted empirical distribution on the real line.
struct EmpiricalVariable {
    std::vector<double> values;
    std::vector<double> weights;  // nonnegative, sums to 1 within 1e-12

    static EmpiricalVariable uniform(std::vector<double> v) {
        EmpiricalVariable e;
        const double w = 1.0 / static_cast<double>(v.size());
        e.weights.assign(v.size(), w);
        e.values = std::move(v);
        return e;
    }

    std::size_t size() const { return values.size(); }

    void validate() const {
        if (values.empty()) throw data_error("empirical variable has no atoms");
        if (values.size() != weights.size())
            throw data_error("empirical variable: values/weights size mismatch");
        NeumaierSum total;
        for (double w : weights) {
            if (!(w >= 0.0)) throw data_error("empirical variable: negative weight");
            total.add(w);
        }
        if (std::abs(total.value() - 1.0) > 1e-12)
            throw data_error("empirical variable: weights do not sum to 1");
    }
};

namespace detail {

/// Atoms sorted by value with exact cumulative weights, cum.back() pinned to 1.
struct SortedAtoms {
    std::vector<double> value;
    std::vector<double> cum;
};

inline SortedAtoms sorted_atoms(const EmpiricalVariable& v) {
    const std::size_t m = v.size();
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return v.values[a] < v.values[b]; });

    SortedAtoms out;
    out.value.resize(m);
    out.cum.resize(m);

    bool equal_weights = true;
    for (std::size_t i = 1; i < m && equal_weights; ++i) {
        equal_weights = v.weights[i] == v.weights[0];
    }

    if (equal_weights) {
        for (std::size_t k = 0; k < m; ++k) {
            out.value[k] = v.values[idx[k]];
            out.cum[k] = static_cast<double>(k + 1) / static_cast<double>(m);
        }
        out.cum.back() = 1.0;
        return out;
    }

    NeumaierSum running;
    for (std::size_t k = 0; k < m; ++k) {
        out.value[k] = v.values[idx[k]];
        running.add(v.weights[idx[k]]);
        out.cum[k] = running.value();
    }
    const double total = out.cum.back();
    for (double& c : out.cum) c /= total;
    out.cum.back() = 1.0;
    return out;
}

inline void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw config_error("confidence level must lie in (0, 1)");
}

}  // namespace detail

/// Weighted mean, compensated, over the fixed chunk order.
inline double mean(const EmpiricalVariable& v) {
    return deterministic_sum(v.size(),
                             [&](std::size_t i) { return v.weights[i] * v.values[i]; });
}

/// Population variance E[V^2] - E[V]^2 via the shifted two-pass form.
inline double variance(const EmpiricalVariable& v) {
    const double mu = mean(v);
    const double s = deterministic_sum(v.size(), [&](std::size_t i) {
        const double d = v.values[i] - mu;
        return v.weights[i] * d * d;
    });
    return std::max(0.0, s);
}

/// Left-continuous generalized inverse inf{x : F(x) >= alpha}. Atoms are
/// handled exactly: no interpolation between them.
inline double var_alpha(const EmpiricalVariable& v, double alpha) {
    detail::check_alpha(alpha);
    const auto sorted = detail::sorted_atoms(v);
    const auto it = std::lower_bound(sorted.cum.begin(), sorted.cum.end(), alpha);
    return sorted.value[static_cast<std::size_t>(it - sorted.cum.begin())];
}

/// Unnormalized tail quantile integral \int_alpha^1 F^{-1}(t) dt. The atom
/// straddling alpha contributes fractionally.
inline double tail_quantile_integral(const EmpiricalVariable& v, double alpha) {
    detail::check_alpha(alpha);
    const auto sorted = detail::sorted_atoms(v);
    NeumaierSum acc;
    for (std::size_t k = sorted.value.size(); k-- > 0;) {
        const double hi = sorted.cum[k];
        const double lo = k == 0 ? 0.0 : sorted.cum[k - 1];
        if (hi <= alpha) break;
        acc.add(sorted.value[k] * (hi - std::max(lo, alpha)));
        if (lo < alpha) break;
    }
    return acc.value();
}

/// CVaR at level alpha: the normalized tail average
/// (1/(1-alpha)) \int_alpha^1 F^{-1}(t) dt, which equals the
/// Rockafellar-Uryasev minimum of q + E[(V-q)_+]/(1-alpha) over q.
inline double cvar_alpha(const EmpiricalVariable& v, double alpha) {
    return tail_quantile_integral(v, alpha) / (1.0 - alpha);
}

/// Wasserstein-1 distance between two one-dimensional empirical laws:
/// \int_0^1 |F_U^{-1}(t) - F_V^{-1}(t)| dt on the merged quantile grid.
inline double wasserstein1(const EmpiricalVariable& u, const EmpiricalVariable& v) {
    const auto su = detail::sorted_atoms(u);
    const auto sv = detail::sorted_atoms(v);
    NeumaierSum acc;
    std::size_t i = 0;
    std::size_t j = 0;
    double t_prev = 0.0;
    while (i < su.value.size() && j < sv.value.size()) {
        const double t = std::min(su.cum[i], sv.cum[j]);
        acc.add(std::abs(su.value[i] - sv.value[j]) * (t - t_prev));
        t_prev = t;
        if (su.cum[i] == t) ++i;
        if (sv.cum[j] == t) ++j;
    }
    return acc.value();
}

}  // namespace definetti

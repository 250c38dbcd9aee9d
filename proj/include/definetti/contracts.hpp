#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "definetti/common.hpp"
#include "definetti/empirical.hpp"
#include "definetti/portfolio.hpp"

namespace definetti {

/// Per-sample suffix sums: column k holds sum_{j>=k} X_j, with an extra
/// all-zero column at the end, so column 0 is the total loss S.
using TailSums = Matrix;

inline TailSums tail_sums(const SampleMatrix& x) {
    const std::size_t m = x.samples();
    const std::size_t n = x.risks();
    Matrix t(m, n + 1);
    for (std::size_t s = 0; s < m; ++s) {
        t(s, n) = 0.0;
        for (std::size_t k = n; k-- > 0;) t(s, k) = t(s, k + 1) + x.data(s, k);
    }
    return t;
}

/// Parameters that generated a variance-optimal contract.
struct VarianceParams {
    double lambda = 0.0;
    double sigma = 0.0;
};

/// Parameters that generated a CVaR-optimal contract. theta[i] scales the
/// pointwise payout bound of risk i when beta_i ties the critical loading
/// K = lambda/(1-alpha); it is ignored elsewhere.
struct CvarParams {
    double lambda = 0.0;
    double alpha = 0.0;
    double q = 0.0;
    std::vector<double> theta;
};

/// Parameters that generated a VaR-feasible contract. coverage[s] is the
/// covered fraction of sample s; fractional values are legal only on the
/// cost atom at q and stand for a weight split of that atom, not a scaled
/// physical payout.
struct VarParams {
    double c = 0.0;
    double q = 0.0;
    std::vector<double> coverage;
};

using ContractParams = std::variant<VarianceParams, CvarParams, VarParams>;

/// A reinsurance contract evaluated on a sample matrix: payout(s, i) is what
/// the reinsurer pays for risk i in sample s, with 0 <= payout <= X.
struct Contract {
    Matrix payout;
    ContractParams params;
};

namespace detail {

/// Risks reordered by ascending loading (stable), with tie blocks. Every
/// closed form below assumes this order; outputs are mapped back.
struct RiskOrder {
    std::vector<std::size_t> perm;  // sorted position -> original column
    std::vector<double> beta;       // ascending
    std::vector<std::pair<std::size_t, std::size_t>> blocks;  // tie runs [first, last)
};

inline RiskOrder make_risk_order(const std::vector<double>& loadings) {
    if (loadings.empty()) throw config_error("at least one loading is required");
    for (double b : loadings) {
        if (!(b > 0.0)) throw config_error("loadings must be strictly positive");
    }
    RiskOrder ord;
    ord.perm.resize(loadings.size());
    std::iota(ord.perm.begin(), ord.perm.end(), std::size_t{0});
    std::stable_sort(ord.perm.begin(), ord.perm.end(),
                     [&](std::size_t a, std::size_t b) { return loadings[a] < loadings[b]; });
    ord.beta.resize(loadings.size());
    for (std::size_t k = 0; k < loadings.size(); ++k) ord.beta[k] = loadings[ord.perm[k]];
    for (std::size_t k = 0; k < ord.beta.size();) {
        std::size_t j = k + 1;
        while (j < ord.beta.size() && ord.beta[j] == ord.beta[k]) ++j;
        ord.blocks.emplace_back(k, j);
        k = j;
    }
    return ord;
}

/// Splits each tie block's total payout across its risks in proportion to the
/// losses (any split is optimal; this is the canonical one). `row` holds the
/// sorted-order payouts of one sample, `xs` the sorted-order losses.
inline void redistribute_ties(const RiskOrder& ord, const double* xs, double* row) {
    for (const auto& [first, last] : ord.blocks) {
        if (last - first < 2) continue;
        double total = 0.0;
        double xsum = 0.0;
        for (std::size_t k = first; k < last; ++k) {
            total += row[k];
            xsum += xs[k];
        }
        for (std::size_t k = first; k < last; ++k) {
            row[k] = xsum > 0.0 ? total * (xs[k] / xsum) : 0.0;
        }
    }
}

}  // namespace detail

/// The variance-optimal layered form: in ascending-loading order,
/// R_k = (sum_{i>=k} X_i - beta_k/(2 lambda) - sigma)_+ ^ X_k.
/// lambda = 0 yields the zero contract.
inline Contract variance_contract(const SampleMatrix& x, const std::vector<double>& loadings,
                                  double lambda, double sigma) {
    if (lambda < 0.0) throw config_error("lambda must be nonnegative");
    if (sigma < 0.0) throw config_error("sigma must be nonnegative");
    if (loadings.size() != x.risks()) throw config_error("one loading per risk is required");

    Contract out;
    out.params = VarianceParams{lambda, sigma};
    out.payout = Matrix(x.samples(), x.risks(), 0.0);
    if (lambda == 0.0) return out;

    const auto ord = detail::make_risk_order(loadings);
    const std::size_t n = x.risks();
    std::vector<double> offset(n);
    for (std::size_t k = 0; k < n; ++k) offset[k] = ord.beta[k] / (2.0 * lambda) + sigma;

    std::vector<double> xs(n);
    std::vector<double> row(n);
    for (std::size_t s = 0; s < x.samples(); ++s) {
        for (std::size_t k = 0; k < n; ++k) xs[k] = x.data(s, ord.perm[k]);
        double suffix = 0.0;
        for (std::size_t k = n; k-- > 0;) {
            suffix += xs[k];
            row[k] = clip(suffix - offset[k], 0.0, xs[k]);
        }
        detail::redistribute_ties(ord, xs.data(), row.data());
        for (std::size_t k = 0; k < n; ++k) out.payout(s, ord.perm[k]) = row[k];
    }
    return out;
}

/// Retained total Z_eta = S - sum_i (T_i - eta)_+ ^ X_i with
/// T_i = sum_{j>=i} X_j - beta_i/(2 lambda), evaluated per sample.
inline EmpiricalVariable z_eta(const SampleMatrix& x, const std::vector<double>& loadings,
                               double lambda, double eta) {
    if (!(lambda > 0.0)) throw config_error("lambda must be positive");
    if (eta < 0.0) throw config_error("eta must be nonnegative");
    if (loadings.size() != x.risks()) throw config_error("one loading per risk is required");
    const auto ord = detail::make_risk_order(loadings);
    const std::size_t n = x.risks();
    std::vector<double> offset(n);
    for (std::size_t k = 0; k < n; ++k) offset[k] = ord.beta[k] / (2.0 * lambda) + eta;

    EmpiricalVariable z;
    z.values.resize(x.samples());
    z.weights = x.weights;
    for (std::size_t s = 0; s < x.samples(); ++s) {
        double suffix = 0.0;
        double ceded = 0.0;
        for (std::size_t k = n; k-- > 0;) {
            const double xk = x.data(s, ord.perm[k]);
            suffix += xk;
            ceded += clip(suffix - offset[k], 0.0, xk);
        }
        z.values[s] = suffix - ceded;
    }
    return z;
}

namespace detail {

/// Loadings within this relative distance of K = lambda/(1-alpha) count as
/// tied; the constrained solver snaps lambda onto beta_i (1-alpha) to within
/// the same tolerance.
constexpr double kTieRelTol = 1e-9;

inline bool tied_to_k(double beta, double k_critical) {
    return std::abs(beta - k_critical) <= kTieRelTol * std::max({1.0, beta, k_critical});
}

}  // namespace detail

/// The CVaR-optimal indicator form: with K = lambda/(1-alpha) and ascending
/// loadings, R_i = I(beta_i < K) (sum_{j>=i} X_j - q)_+ ^ X_i; risks with
/// beta_i = K pay theta_i times that bound.
inline Contract cvar_contract(const SampleMatrix& x, const std::vector<double>& loadings,
                              double lambda, double alpha, double q,
                              std::vector<double> theta = {}) {
    if (lambda < 0.0) throw config_error("lambda must be nonnegative");
    detail::check_alpha(alpha);
    if (q < 0.0) throw config_error("q must be nonnegative");
    if (loadings.size() != x.risks()) throw config_error("one loading per risk is required");
    if (theta.empty()) theta.assign(x.risks(), 0.0);
    if (theta.size() != x.risks()) throw config_error("one theta per risk is required");
    for (double t : theta) {
        if (!(t >= 0.0 && t <= 1.0)) throw config_error("theta must lie in [0, 1]");
    }

    const auto ord = detail::make_risk_order(loadings);
    const std::size_t n = x.risks();
    const double k_critical = lambda / (1.0 - alpha);

    // 0 = uncovered, 1 = covered, 2 = tied (theta-scaled).
    std::vector<int> mode(n);
    std::vector<double> theta_sorted(n);
    for (std::size_t k = 0; k < n; ++k) {
        theta_sorted[k] = theta[ord.perm[k]];
        if (detail::tied_to_k(ord.beta[k], k_critical)) {
            mode[k] = 2;
        } else {
            mode[k] = ord.beta[k] < k_critical ? 1 : 0;
        }
    }

    Contract out;
    out.params = CvarParams{lambda, alpha, q, std::move(theta)};
    out.payout = Matrix(x.samples(), n, 0.0);

    // Tie blocks at the critical loading keep their theta-scaled per-index
    // payouts; only fully covered blocks get the canonical proportional split.
    std::vector<std::pair<std::size_t, std::size_t>> covered_blocks;
    for (const auto& blk : ord.blocks) {
        if (mode[blk.first] == 1) covered_blocks.push_back(blk);
    }
    detail::RiskOrder covered_ord = ord;
    covered_ord.blocks = covered_blocks;

    std::vector<double> xs(n);
    std::vector<double> row(n);
    for (std::size_t s = 0; s < x.samples(); ++s) {
        for (std::size_t k = 0; k < n; ++k) xs[k] = x.data(s, ord.perm[k]);
        double suffix = 0.0;
        for (std::size_t k = n; k-- > 0;) {
            suffix += xs[k];
            const double bound = clip(suffix - q, 0.0, xs[k]);
            row[k] = mode[k] == 1 ? bound : (mode[k] == 2 ? theta_sorted[k] * bound : 0.0);
        }
        detail::redistribute_ties(covered_ord, xs.data(), row.data());
        for (std::size_t k = 0; k < n; ++k) out.payout(s, ord.perm[k]) = row[k];
    }
    return out;
}

/// The cheapest per-sample layered cession bringing the retained total down
/// to at most c, filling columns left to right:
/// phi_k(x) = (sum_{j>=k} x_j - c)_+ ^ x_k. Column order is the priority
/// order, so callers pass columns sorted by ascending loading.
inline Matrix phi_map(const SampleMatrix& x, double c) {
    if (c < 0.0) throw config_error("retention level c must be nonnegative");
    const std::size_t n = x.risks();
    Matrix phi(x.samples(), n, 0.0);
    for (std::size_t s = 0; s < x.samples(); ++s) {
        double suffix = 0.0;
        for (std::size_t k = n; k-- > 0;) {
            const double xk = x.data(s, k);
            suffix += xk;
            phi(s, k) = clip(suffix - c, 0.0, xk);
        }
    }
    return phi;
}

/// VaR contract: R[s] = coverage[s] * phi(X[s]) with phi built in
/// ascending-loading priority order. Fractional coverage is accepted only on
/// samples whose cession cost beta.phi equals q (the atom the randomization
/// variable splits).
inline Contract var_contract(const SampleMatrix& x, const std::vector<double>& loadings,
                             double c, double q, std::vector<double> coverage) {
    if (loadings.size() != x.risks()) throw config_error("one loading per risk is required");
    if (coverage.size() != x.samples())
        throw config_error("one coverage entry per sample is required");
    for (double g : coverage) {
        if (!(g >= 0.0 && g <= 1.0)) throw config_error("coverage must lie in [0, 1]");
    }

    const auto ord = detail::make_risk_order(loadings);
    const std::size_t n = x.risks();

    SampleMatrix sorted;
    sorted.weights = x.weights;
    sorted.data = Matrix(x.samples(), n);
    for (std::size_t s = 0; s < x.samples(); ++s) {
        for (std::size_t k = 0; k < n; ++k) sorted.data(s, k) = x.data(s, ord.perm[k]);
    }
    const Matrix phi = phi_map(sorted, c);

    Contract out;
    out.payout = Matrix(x.samples(), n, 0.0);
    for (std::size_t s = 0; s < x.samples(); ++s) {
        const double g = coverage[s];
        if (g > 0.0 && g < 1.0) {
            double cost = 0.0;
            for (std::size_t k = 0; k < n; ++k) cost += ord.beta[k] * phi(s, k);
            if (std::abs(cost - q) > 1e-9 * (1.0 + std::abs(q)))
                throw config_error("fractional coverage is only valid on the cost atom at q");
        }
        for (std::size_t k = 0; k < n; ++k) out.payout(s, ord.perm[k]) = g * phi(s, k);
    }
    out.params = VarParams{c, q, std::move(coverage)};
    return out;
}

/// Premium f(R, X) = sum_i beta_i E[R_i].
inline double premium(const Matrix& payout, const std::vector<double>& weights,
                      const std::vector<double>& loadings) {
    if (loadings.size() != payout.cols) throw config_error("one loading per risk is required");
    NeumaierSum total;
    for (std::size_t i = 0; i < payout.cols; ++i) {
        NeumaierSum col;
        for (std::size_t s = 0; s < payout.rows; ++s) col.add(weights[s] * payout(s, i));
        total.add(loadings[i] * col.value());
    }
    return total.value();
}

inline double premium(const Contract& r, const SampleMatrix& x,
                      const std::vector<double>& loadings) {
    return premium(r.payout, x.weights, loadings);
}

/// Retained aggregate loss Z = S - sum_i R_i per sample. Rejects payouts
/// violating 0 <= R <= X beyond the 1e-12 box tolerance.
inline EmpiricalVariable retained(const SampleMatrix& x, const Contract& r) {
    if (r.payout.rows != x.samples() || r.payout.cols != x.risks())
        throw data_error("contract shape does not match the sample matrix");
    EmpiricalVariable z;
    z.values.resize(x.samples());
    z.weights = x.weights;
    for (std::size_t s = 0; s < x.samples(); ++s) {
        NeumaierSum net;
        for (std::size_t i = 0; i < x.risks(); ++i) {
            const double ri = r.payout(s, i);
            const double xi = x.data(s, i);
            if (ri < -1e-12 || ri > xi + 1e-12)
                throw data_error("contract violates 0 <= R <= X");
            net.add(xi - ri);
        }
        z.values[s] = std::max(0.0, net.value());
    }
    return z;
}

/// Risk measure selector for the penalized objective.
struct RiskMeasure {
    enum class Kind { variance, cvar };
    Kind kind = Kind::variance;
    double alpha = 0.0;

    static RiskMeasure make_variance() { return RiskMeasure{Kind::variance, 0.0}; }
    static RiskMeasure make_cvar(double alpha) { return RiskMeasure{Kind::cvar, alpha}; }

    double evaluate(const EmpiricalVariable& z) const {
        return kind == Kind::variance ? variance(z) : cvar_alpha(z, alpha);
    }
};

/// Penalized objective f(R, X) + lambda rho(Z).
inline double penalized_objective(const SampleMatrix& x, const Contract& r,
                                  const std::vector<double>& loadings, double lambda,
                                  const RiskMeasure& measure) {
    if (lambda < 0.0) throw config_error("lambda must be nonnegative");
    return premium(r, x, loadings) + lambda * measure.evaluate(retained(x, r));
}

/// Audit CSV: per-sample payout columns R1..Rn plus the atom weight, at full
/// double precision, so premium and risk recompute exactly from the file.
/// VaR contracts pass the weights of their (possibly split) sample space.
inline void save_contract_csv(const std::string& path, const Matrix& payout,
                              const std::vector<double>& weights) {
    if (weights.size() != payout.rows)
        throw data_error("contract CSV: one weight per sample is required");
    std::ofstream out(path);
    if (!out) throw data_error("cannot write contract file: " + path);
    for (std::size_t i = 0; i < payout.cols; ++i) out << "R" << (i + 1) << ",";
    out << "weight\n";
    char buf[32];
    for (std::size_t s = 0; s < payout.rows; ++s) {
        for (std::size_t i = 0; i < payout.cols; ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", payout(s, i));
            out << buf << ",";
        }
        std::snprintf(buf, sizeof(buf), "%.17g", weights[s]);
        out << buf << "\n";
    }
    if (!out) throw data_error("failed writing contract file: " + path);
}

}  // namespace definetti

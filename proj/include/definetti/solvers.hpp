#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "definetti/common.hpp"
#include "definetti/contracts.hpp"
#include "definetti/empirical.hpp"
#include "definetti/portfolio.hpp"

namespace definetti {

/// Root-finder tolerances. inner_tol bounds |h(sigma)| (or the derivative
/// sandwich residual at q*); outer_tol is relative on |risk - c|.
struct Tolerances {
    double inner_tol = 1e-10;
    double outer_tol = 1e-6;
    int max_iter = 200;

    void validate() const {
        if (!(inner_tol > 0.0) || !(outer_tol > 0.0) || max_iter <= 0)
            throw config_error("tolerances must be positive");
    }
};

enum class SigmaMethod { bisection, fixed_point };

struct BracketPoint {
    double lambda = 0.0;
    double risk = 0.0;
};

struct IterationCounts {
    int inner = 0;
    int outer = 0;
};

/// Everything a solve reports besides the contract itself. risk_value and
/// premium always match a recomputation from the returned contract.
struct SolveReport {
    std::string measure;  // variance | cvar | var
    std::string mode;     // penalized | constrained
    double lambda = 0.0;
    double inner_param = 0.0;  // sigma (variance) or q (cvar/var)
    double theta = 0.0;        // tie weight on the critical risk (cvar gap case)
    int tied_index = -1;       // original index of that risk, -1 if none
    double coverage_mass = 0.0;  // covered probability mass (var measure)
    double premium = 0.0;
    double risk_value = 0.0;
    double objective = 0.0;
    IterationCounts iterations;
    std::vector<BracketPoint> bracket;  // every outer (lambda, risk) evaluation
    double inner_residual = 0.0;
    double outer_residual = 0.0;
    bool gap_case = false;
    bool flat_lambda_region = false;
};

struct SolveResult {
    Contract contract;
    SolveReport report;
};

/// VaR solves may split one atom of the sample space; the contract lives on
/// the (possibly extended) space returned here.
struct VarSolution {
    SampleMatrix samples;
    Contract contract;
    SolveReport report;
};

namespace detail {

/// Shared state for the variance inner solves: columns permuted into
/// ascending-loading order once.
struct VarianceContext {
    Matrix xs;  // m x n, sorted columns
    std::vector<double> weights;
    RiskOrder ord;
    double expected_s = 0.0;
    double min_s = 0.0;
    double max_s = 0.0;

    std::size_t samples() const { return xs.rows; }
    std::size_t risks() const { return xs.cols; }
};

inline VarianceContext make_variance_context(const SampleMatrix& x,
                                             const std::vector<double>& loadings) {
    x.validate();
    if (loadings.size() != x.risks()) throw config_error("one loading per risk is required");
    VarianceContext ctx;
    ctx.ord = make_risk_order(loadings);
    ctx.weights = x.weights;
    ctx.xs = Matrix(x.samples(), x.risks());
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    NeumaierSum es;
    for (std::size_t s = 0; s < x.samples(); ++s) {
        double row_sum = 0.0;
        for (std::size_t k = 0; k < x.risks(); ++k) {
            const double v = x.data(s, ctx.ord.perm[k]);
            ctx.xs(s, k) = v;
            row_sum += v;
        }
        es.add(x.weights[s] * row_sum);
        lo = std::min(lo, row_sum);
        hi = std::max(hi, row_sum);
    }
    ctx.expected_s = es.value();
    ctx.min_s = lo;
    ctx.max_s = hi;
    return ctx;
}

/// E[Z_eta] for fixed lambda-offsets tk = beta_k / (2 lambda).
inline double mean_z_eta(const VarianceContext& ctx, const std::vector<double>& tk,
                         double eta) {
    const std::size_t n = ctx.risks();
    return deterministic_sum(ctx.samples(), [&](std::size_t s) {
        const double* row = ctx.xs.row(s);
        double suffix = 0.0;
        double ceded = 0.0;
        for (std::size_t k = n; k-- > 0;) {
            suffix += row[k];
            ceded += clip(suffix - tk[k] - eta, 0.0, row[k]);
        }
        return ctx.weights[s] * (suffix - ceded);
    });
}

struct SigmaSolve {
    double sigma = 0.0;
    int iterations = 0;
    double residual = 0.0;
    bool used_fixed_point = false;
};

inline SigmaSolve solve_sigma_impl(const VarianceContext& ctx, double lambda,
                                   const Tolerances& tol, SigmaMethod method) {
    if (!(lambda > 0.0)) throw config_error("lambda must be positive");
    std::vector<double> tk(ctx.risks());
    for (std::size_t k = 0; k < ctx.risks(); ++k) tk[k] = ctx.ord.beta[k] / (2.0 * lambda);

    SigmaSolve result;
    const double es = ctx.expected_s;
    auto h = [&](double eta) { return eta - mean_z_eta(ctx, tk, eta); };

    const double h0 = h(0.0);
    ++result.iterations;
    if (h0 > tol.inner_tol)
        throw solver_error("sigma bracket failure: h(0) = " + std::to_string(h0) +
                           " > 0; E[Z_0] cannot be negative");
    if (std::abs(h0) <= tol.inner_tol) {
        result.residual = std::abs(h0);
        return result;
    }

    if (method == SigmaMethod::fixed_point) {
        // Contraction probe: the fixed-point route is only taken when the
        // sampled slope of eta -> E[Z_eta] stays below 0.95.
        const double delta = std::max(es, 1.0) * 1e-6;
        bool contractive = true;
        for (int p = 0; p < 5 && contractive; ++p) {
            const double eta = es * (p + 0.5) / 5.0;
            const double slope =
                (mean_z_eta(ctx, tk, eta + delta) - mean_z_eta(ctx, tk, eta)) / delta;
            result.iterations += 2;
            contractive = slope <= 0.95;
        }
        if (contractive) {
            double eta = 0.5 * es;
            for (int it = 0; it < tol.max_iter; ++it) {
                const double next = mean_z_eta(ctx, tk, eta);
                ++result.iterations;
                if (std::abs(eta - next) <= tol.inner_tol) {
                    result.sigma = next;
                    result.residual = std::abs(h(next));
                    result.used_fixed_point = true;
                    return result;
                }
                eta = next;
            }
        }
        // Probe failed or the cap was hit: fall through to bisection.
    }

    double lo = 0.0;
    double hi = es;
    double mid = 0.5 * es;
    double hmid = 0.0;
    // h is nondecreasing and 2-Lipschitz, so |h| <= inner_tol is reached once
    // the bracket width falls below inner_tol / 2.
    while (hi - lo > 0.5 * tol.inner_tol) {
        mid = 0.5 * (lo + hi);
        hmid = h(mid);
        ++result.iterations;
        if (std::abs(hmid) <= tol.inner_tol) break;
        (hmid < 0.0 ? lo : hi) = mid;
    }
    result.sigma = mid;
    result.residual = std::abs(hmid);
    return result;
}

/// Premium and retained variance of the variance-optimal contract at
/// (lambda, sigma), without materializing the payout matrix.
struct VariancePoint {
    double premium = 0.0;
    double risk = 0.0;
};

inline VariancePoint variance_point(const VarianceContext& ctx, double lambda, double sigma) {
    const std::size_t n = ctx.risks();
    std::vector<double> offset(n);
    for (std::size_t k = 0; k < n; ++k) offset[k] = ctx.ord.beta[k] / (2.0 * lambda) + sigma;

    std::vector<NeumaierSum> col(n);
    NeumaierSum zm;
    NeumaierSum zm2;
    std::vector<double> z(ctx.samples());
    for (std::size_t s = 0; s < ctx.samples(); ++s) {
        const double* row = ctx.xs.row(s);
        double suffix = 0.0;
        double ceded = 0.0;
        for (std::size_t k = n; k-- > 0;) {
            suffix += row[k];
            const double r = clip(suffix - offset[k], 0.0, row[k]);
            col[k].add(ctx.weights[s] * r);
            ceded += r;
        }
        z[s] = suffix - ceded;
        zm.add(ctx.weights[s] * z[s]);
    }
    const double mu = zm.value();
    for (std::size_t s = 0; s < ctx.samples(); ++s) {
        const double d = z[s] - mu;
        zm2.add(ctx.weights[s] * d * d);
    }
    VariancePoint out;
    NeumaierSum prem;
    for (std::size_t k = 0; k < n; ++k) prem.add(ctx.ord.beta[k] * col[k].value());
    out.premium = prem.value();
    out.risk = std::max(0.0, zm2.value());
    return out;
}

/// Records an outer (lambda, risk) evaluation and verifies the curve stays
/// nonincreasing; a violation aborts with the sampled curve attached.
inline void audit_insert(std::vector<BracketPoint>& audit, double lambda, double risk,
                         double scale) {
    const auto pos = std::lower_bound(
        audit.begin(), audit.end(), lambda,
        [](const BracketPoint& p, double l) { return p.lambda < l; });
    const auto it = audit.insert(pos, BracketPoint{lambda, risk});
    const double slack = 1e-9 * (1.0 + scale);
    const bool bad_left = it != audit.begin() && std::prev(it)->risk < risk - slack;
    const bool bad_right = std::next(it) != audit.end() && std::next(it)->risk > risk + slack;
    if (bad_left || bad_right) {
        std::ostringstream msg;
        msg << "risk value is not monotone in lambda; sampled curve:";
        for (const auto& p : audit) msg << " (" << p.lambda << ", " << p.risk << ")";
        throw solver_error(msg.str());
    }
}

}  // namespace detail

/// Solves h(eta) = eta - E[Z_eta] = 0 on [0, E[S]] for the constant sigma of
/// the variance-optimal contract. Bisection is always valid; the fixed-point
/// mode is an accelerator gated by a contraction probe.
inline double solve_sigma(const SampleMatrix& x, const std::vector<double>& loadings,
                          double lambda, const Tolerances& tol = {},
                          SigmaMethod method = SigmaMethod::bisection) {
    tol.validate();
    const auto ctx = detail::make_variance_context(x, loadings);
    return detail::solve_sigma_impl(ctx, lambda, tol, method).sigma;
}

/// Minimizes premium + lambda Var(Z) over 0 <= R <= X.
inline SolveResult solve_penalized_variance(const SampleMatrix& x,
                                            const std::vector<double>& loadings, double lambda,
                                            const Tolerances& tol = {},
                                            SigmaMethod method = SigmaMethod::bisection) {
    tol.validate();
    if (lambda < 0.0) throw config_error("lambda must be nonnegative");
    const auto ctx = detail::make_variance_context(x, loadings);

    SolveResult out;
    out.report.measure = "variance";
    out.report.mode = "penalized";
    out.report.lambda = lambda;

    if (lambda == 0.0) {
        out.contract = variance_contract(x, loadings, 0.0, 0.0);
        out.report.inner_param = ctx.expected_s;  // Z = S, so sigma = E[S]
        const auto z = retained(x, out.contract);
        out.report.risk_value = variance(z);
        return out;
    }

    const auto sig = detail::solve_sigma_impl(ctx, lambda, tol, method);
    out.contract = variance_contract(x, loadings, lambda, sig.sigma);
    const auto point = detail::variance_point(ctx, lambda, sig.sigma);
    out.report.inner_param = sig.sigma;
    out.report.premium = point.premium;
    out.report.risk_value = point.risk;
    out.report.objective = point.premium + lambda * point.risk;
    out.report.iterations.inner = sig.iterations;
    out.report.inner_residual = sig.residual;
    return out;
}

/// Minimizes premium subject to Var(Z) <= c by bisecting lambda until the
/// constraint is active. Returns the smallest lambda attaining the target.
inline SolveResult solve_constrained_variance(const SampleMatrix& x,
                                              const std::vector<double>& loadings, double c,
                                              const Tolerances& tol = {},
                                              SigmaMethod method = SigmaMethod::bisection) {
    tol.validate();
    if (!(c > 0.0)) throw config_error("variance bound c must be positive");
    const auto ctx = detail::make_variance_context(x, loadings);
    const double var_s = variance(x.total_loss());

    SolveResult out;
    out.report.measure = "variance";
    out.report.mode = "constrained";

    if (c >= var_s) {
        out.contract = variance_contract(x, loadings, 0.0, 0.0);
        out.report.inner_param = ctx.expected_s;
        out.report.risk_value = var_s;
        out.report.outer_residual = 0.0;
        return out;
    }

    int inner_total = 0;
    auto risk_at = [&](double lambda) {
        const auto sig = detail::solve_sigma_impl(ctx, lambda, tol, method);
        inner_total += sig.iterations;
        const auto point = detail::variance_point(ctx, lambda, sig.sigma);
        detail::audit_insert(out.report.bracket, lambda, point.risk, var_s);
        ++out.report.iterations.outer;
        return point.risk;
    };

    // Expand the bracket until the risk falls through c.
    double lo = 0.0;
    detail::audit_insert(out.report.bracket, 0.0, var_s, var_s);
    double hi = std::max(1e-8, ctx.ord.beta.back() * (ctx.max_s - ctx.min_s) / (2.0 * c));
    int expand = 0;
    while (risk_at(hi) > c) {
        lo = hi;
        hi *= 2.0;
        if (++expand > tol.max_iter)
            throw solver_error("variance bracket expansion failed: Var(Z) stays above c");
    }

    // Bisect on the predicate Var(Z(lambda)) <= c; hi converges to the
    // smallest lambda attaining the bound.
    int iters = 0;
    while (hi - lo > 1e-9 * std::max(1.0, hi)) {
        if (++iters > tol.max_iter)
            throw solver_error("variance outer bisection hit the iteration cap");
        const double mid = 0.5 * (lo + hi);
        (risk_at(mid) <= c ? hi : lo) = mid;
    }

    const auto sig = detail::solve_sigma_impl(ctx, hi, tol, method);
    inner_total += sig.iterations;
    const auto point = detail::variance_point(ctx, hi, sig.sigma);
    out.report.outer_residual = std::abs(point.risk - c);
    if (out.report.outer_residual > tol.outer_tol * c) {
        std::ostringstream msg;
        msg << "constrained variance solve did not reach the target: |Var(Z) - c| = "
            << out.report.outer_residual << " at lambda = " << hi;
        throw solver_error(msg.str());
    }

    // A flat stretch of the lambda-curve at value c is reported, and the
    // smallest such lambda is the one returned.
    double risk_lo = var_s;
    for (const auto& p : out.report.bracket) {
        if (p.lambda == lo) risk_lo = p.risk;
    }
    out.report.flat_lambda_region = lo > 0.0 && std::abs(risk_lo - c) <= tol.outer_tol * c;

    out.contract = variance_contract(x, loadings, hi, sig.sigma);
    out.report.lambda = hi;
    out.report.inner_param = sig.sigma;
    out.report.premium = point.premium;
    out.report.risk_value = point.risk;
    out.report.objective = point.premium;
    out.report.iterations.inner = inner_total;
    out.report.inner_residual = sig.residual;
    return out;
}

namespace detail {

/// Shared state for CVaR solves: per-risk tail sums sorted with suffix
/// weights (exact atom probabilities), and the merged atom grid on which the
/// step function J' changes value.
struct CvarContext {
    RiskOrder ord;
    Matrix xs;  // sorted columns
    std::vector<double> weights;
    std::vector<std::vector<double>> tail_value;  // per risk: sorted tail sums
    std::vector<std::vector<double>> tail_suffw;  // per risk: suffix weights (size m+1)
    std::vector<double> q_atoms;                  // merged tail-sum values <= VaR_alpha(S)
    EmpiricalVariable total;
    double alpha = 0.0;
    double var_s = 0.0;
    double cvar_s = 0.0;

    std::size_t samples() const { return xs.rows; }
    std::size_t risks() const { return xs.cols; }

    /// P(q <= tail_i) and P(q < tail_i).
    double prob_ge(std::size_t i, double q) const {
        const auto& v = tail_value[i];
        const std::size_t k =
            static_cast<std::size_t>(std::lower_bound(v.begin(), v.end(), q) - v.begin());
        return tail_suffw[i][k];
    }
    double prob_gt(std::size_t i, double q) const {
        const auto& v = tail_value[i];
        const std::size_t k =
            static_cast<std::size_t>(std::upper_bound(v.begin(), v.end(), q) - v.begin());
        return tail_suffw[i][k];
    }
};

inline CvarContext make_cvar_context(const SampleMatrix& x, const std::vector<double>& loadings,
                                     double alpha) {
    x.validate();
    check_alpha(alpha);
    if (loadings.size() != x.risks()) throw config_error("one loading per risk is required");

    CvarContext ctx;
    ctx.alpha = alpha;
    ctx.ord = make_risk_order(loadings);
    ctx.weights = x.weights;
    const std::size_t m = x.samples();
    const std::size_t n = x.risks();
    ctx.xs = Matrix(m, n);
    for (std::size_t s = 0; s < m; ++s) {
        for (std::size_t k = 0; k < n; ++k) ctx.xs(s, k) = x.data(s, ctx.ord.perm[k]);
    }

    ctx.total.values.resize(m);
    ctx.total.weights = x.weights;
    Matrix tails(m, n);
    for (std::size_t s = 0; s < m; ++s) {
        double suffix = 0.0;
        for (std::size_t k = n; k-- > 0;) {
            suffix += ctx.xs(s, k);
            tails(s, k) = suffix;
        }
        ctx.total.values[s] = suffix;
    }
    ctx.var_s = var_alpha(ctx.total, alpha);
    ctx.cvar_s = cvar_alpha(ctx.total, alpha);

    ctx.tail_value.resize(n);
    ctx.tail_suffw.resize(n);
    std::vector<std::size_t> idx(m);
    for (std::size_t i = 0; i < n; ++i) {
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return tails(a, i) < tails(b, i);
        });
        auto& vals = ctx.tail_value[i];
        auto& suffw = ctx.tail_suffw[i];
        vals.resize(m);
        suffw.assign(m + 1, 0.0);
        for (std::size_t k = 0; k < m; ++k) vals[k] = tails(idx[k], i);
        NeumaierSum acc;
        for (std::size_t k = m; k-- > 0;) {
            acc.add(x.weights[idx[k]]);
            suffw[k] = acc.value();
        }
        for (std::size_t k = 0; k < m; ++k) {
            if (vals[k] <= ctx.var_s) ctx.q_atoms.push_back(vals[k]);
        }
    }
    std::sort(ctx.q_atoms.begin(), ctx.q_atoms.end());
    ctx.q_atoms.erase(std::unique(ctx.q_atoms.begin(), ctx.q_atoms.end()), ctx.q_atoms.end());
    return ctx;
}

/// One-sided derivatives of J at q, parameterized by the critical loading K
/// (K = lambda/(1-alpha) except when snapped onto a tied beta_i).
inline std::pair<double, double> j_derivatives_impl(const CvarContext& ctx, double k_critical,
                                                    double lambda, double q) {
    double jm = lambda;
    double jp = lambda;
    double prev = pos_part(k_critical);  // (K - beta_0)_+ with beta_0 = 0
    for (std::size_t i = 0; i < ctx.risks(); ++i) {
        const double cur = pos_part(k_critical - ctx.ord.beta[i]);
        const double coef = cur - prev;
        if (coef != 0.0) {
            jm += coef * ctx.prob_ge(i, q);
            jp += coef * ctx.prob_gt(i, q);
        }
        prev = cur;
    }
    return {jm, jp};
}

/// q* satisfying J'_-(q) <= 0 <= J'_+(q) on [0, VaR_alpha(S)]. J'_+ is a
/// nondecreasing right-continuous step function whose jumps sit on the tail
/// atom grid, so binary search over that grid lands on the sandwich point
/// exactly; the endpoint rules of the first-order condition cover the rest.
inline double solve_q_star_impl(const CvarContext& ctx, double k_critical, double lambda,
                                int* iterations = nullptr) {
    auto jp = [&](double q) {
        if (iterations) ++*iterations;
        return j_derivatives_impl(ctx, k_critical, lambda, q).second;
    };
    if (jp(0.0) >= 0.0) return 0.0;
    if (jp(ctx.var_s) < 0.0) return ctx.var_s;

    std::size_t lo = 0;  // jp(q_atoms[lo]) < 0 invariant after the checks below
    std::size_t hi = ctx.q_atoms.size() - 1;
    if (jp(ctx.q_atoms[0]) >= 0.0) return ctx.q_atoms[0];
    while (hi - lo > 1) {
        const std::size_t mid = lo + (hi - lo) / 2;
        (jp(ctx.q_atoms[mid]) >= 0.0 ? hi : lo) = mid;
    }
    return ctx.q_atoms[hi];
}

/// Risk modes at critical loading K: 0 uncovered, 1 covered, 2 tied.
inline std::vector<int> risk_modes(const CvarContext& ctx, double k_critical) {
    std::vector<int> mode(ctx.risks());
    for (std::size_t k = 0; k < ctx.risks(); ++k) {
        if (tied_to_k(ctx.ord.beta[k], k_critical)) {
            mode[k] = 2;
        } else {
            mode[k] = ctx.ord.beta[k] < k_critical ? 1 : 0;
        }
    }
    return mode;
}

/// Per-sample covered cession and tied-risk payout bound at quantile q.
struct CvarCession {
    std::vector<double> covered;  // sum of covered payouts per sample
    std::vector<double> tied;     // sum of tied payout bounds per sample
};

inline CvarCession cvar_cession(const CvarContext& ctx, const std::vector<int>& mode,
                                double q) {
    CvarCession out;
    out.covered.assign(ctx.samples(), 0.0);
    out.tied.assign(ctx.samples(), 0.0);
    const std::size_t n = ctx.risks();
    for (std::size_t s = 0; s < ctx.samples(); ++s) {
        const double* row = ctx.xs.row(s);
        double suffix = 0.0;
        for (std::size_t k = n; k-- > 0;) {
            suffix += row[k];
            if (mode[k] == 0) continue;
            const double bound = clip(suffix - q, 0.0, row[k]);
            (mode[k] == 1 ? out.covered[s] : out.tied[s]) += bound;
        }
    }
    return out;
}

inline double cvar_of_retained(const CvarContext& ctx, const CvarCession& cession,
                               double theta) {
    EmpiricalVariable z;
    z.weights = ctx.weights;
    z.values.resize(ctx.samples());
    for (std::size_t s = 0; s < ctx.samples(); ++s) {
        z.values[s] =
            std::max(0.0, ctx.total.values[s] - cession.covered[s] - theta * cession.tied[s]);
    }
    return cvar_alpha(z, ctx.alpha);
}

}  // namespace detail

/// One-sided derivatives (J'_-, J'_+) of the inner CVaR objective at q.
inline std::pair<double, double> j_derivatives(const SampleMatrix& x,
                                               const std::vector<double>& loadings,
                                               double lambda, double alpha, double q) {
    if (lambda < 0.0) throw config_error("lambda must be nonnegative");
    if (q < 0.0) throw config_error("q must be nonnegative");
    const auto ctx = detail::make_cvar_context(x, loadings, alpha);
    return detail::j_derivatives_impl(ctx, lambda / (1.0 - alpha), lambda, q);
}

/// The optimal Rockafellar-Uryasev quantile q* in [0, VaR_alpha(S)].
inline double solve_q_star(const SampleMatrix& x, const std::vector<double>& loadings,
                           double lambda, double alpha, const Tolerances& tol = {}) {
    tol.validate();
    if (!(lambda > 0.0)) throw config_error("lambda must be positive");
    const auto ctx = detail::make_cvar_context(x, loadings, alpha);
    return detail::solve_q_star_impl(ctx, lambda / (1.0 - alpha), lambda);
}

/// Minimizes premium + lambda CVaR_alpha(Z) over 0 <= R <= X. Tied risks
/// (beta_i = lambda/(1-alpha)) take the canonical selection theta = 0.
inline SolveResult solve_penalized_cvar(const SampleMatrix& x,
                                        const std::vector<double>& loadings, double lambda,
                                        double alpha, const Tolerances& tol = {}) {
    tol.validate();
    if (lambda < 0.0) throw config_error("lambda must be nonnegative");
    detail::check_alpha(alpha);

    SolveResult out;
    out.report.measure = "cvar";
    out.report.mode = "penalized";
    out.report.lambda = lambda;

    if (lambda == 0.0) {
        out.contract = cvar_contract(x, loadings, 0.0, alpha, 0.0);
        out.report.risk_value = cvar_alpha(retained(x, out.contract), alpha);
        return out;
    }

    const auto ctx = detail::make_cvar_context(x, loadings, alpha);
    const double k_critical = lambda / (1.0 - alpha);
    int inner = 0;
    const double q = detail::solve_q_star_impl(ctx, k_critical, lambda, &inner);
    out.contract = cvar_contract(x, loadings, lambda, alpha, q);

    const auto z = retained(x, out.contract);
    out.report.inner_param = q;
    out.report.premium = premium(out.contract, x, loadings);
    out.report.risk_value = cvar_alpha(z, alpha);
    out.report.objective = out.report.premium + lambda * out.report.risk_value;
    out.report.iterations.inner = inner;
    const auto [jm, jp] = detail::j_derivatives_impl(ctx, k_critical, lambda, q);
    out.report.inner_residual = std::max(pos_part(jm), pos_part(-jp));
    return out;
}

/// Minimizes premium subject to CVaR_alpha(Z) <= c. If c falls inside a jump
/// of the lambda-curve, the jump is snapped onto lambda* = beta_i (1-alpha)
/// and theta on the tied risk is bisected until the constraint is active.
inline SolveResult solve_constrained_cvar(const SampleMatrix& x,
                                          const std::vector<double>& loadings, double c,
                                          double alpha, const Tolerances& tol = {}) {
    tol.validate();
    detail::check_alpha(alpha);
    if (!(c > 0.0)) throw config_error("CVaR bound c must be positive");
    const auto ctx = detail::make_cvar_context(x, loadings, alpha);

    SolveResult out;
    out.report.measure = "cvar";
    out.report.mode = "constrained";

    if (c >= ctx.cvar_s) {
        out.contract = cvar_contract(x, loadings, 0.0, alpha, 0.0);
        out.report.inner_param = ctx.var_s;
        out.report.risk_value = ctx.cvar_s;
        return out;
    }

    int inner = 0;
    auto risk_at = [&](double lambda) {
        const double k_critical = lambda / (1.0 - alpha);
        const double q = detail::solve_q_star_impl(ctx, k_critical, lambda, &inner);
        const auto mode = detail::risk_modes(ctx, k_critical);
        const auto cession = detail::cvar_cession(ctx, mode, q);
        const double risk = detail::cvar_of_retained(ctx, cession, 0.0);
        detail::audit_insert(out.report.bracket, lambda, risk, ctx.cvar_s);
        ++out.report.iterations.outer;
        return risk;
    };

    double lo = 0.0;
    detail::audit_insert(out.report.bracket, 0.0, ctx.cvar_s, ctx.cvar_s);
    double hi = 2.0 * ctx.ord.beta.back() * (1.0 - alpha);
    int expand = 0;
    while (risk_at(hi) > c) {
        lo = hi;
        hi *= 2.0;
        if (++expand > tol.max_iter)
            throw solver_error("cvar bracket expansion failed: CVaR(Z) stays above c");
    }

    int iters = 0;
    while (hi - lo > 1e-12 * std::max(1.0, hi)) {
        if (++iters > tol.max_iter)
            throw solver_error("cvar outer bisection hit the iteration cap");
        const double mid = 0.5 * (lo + hi);
        (risk_at(mid) <= c ? hi : lo) = mid;
    }

    double lambda_star = hi;
    double k_critical = lambda_star / (1.0 - alpha);
    double q = detail::solve_q_star_impl(ctx, k_critical, lambda_star, &inner);
    auto mode = detail::risk_modes(ctx, k_critical);
    auto cession = detail::cvar_cession(ctx, mode, q);
    double theta = 0.0;
    double risk = detail::cvar_of_retained(ctx, cession, theta);

    if (std::abs(risk - c) > tol.outer_tol * c) {
        // The bracket collapsed without reaching c: the target sits in a jump
        // of the lambda-curve. A jump at beta_i (1-alpha) is the tie case and
        // is resolved by theta; anywhere else it is q* hopping between two
        // adjacent atoms, where the first-order condition is flat on the whole
        // segment and any q in between is optimal.
        std::size_t tied = ctx.risks();
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < ctx.risks(); ++k) {
            const double jump = ctx.ord.beta[k] * (1.0 - alpha);
            const double d = std::abs(lambda_star - jump);
            if (d < best) {
                best = d;
                tied = k;
            }
        }
        if (tied != ctx.risks() && best <= 1e-9 * std::max(1.0, lambda_star)) {
            out.report.gap_case = true;
            out.report.tied_index = static_cast<int>(ctx.ord.perm[tied]);
            k_critical = ctx.ord.beta[tied];
            lambda_star = ctx.ord.beta[tied] * (1.0 - alpha);
            q = detail::solve_q_star_impl(ctx, k_critical, lambda_star, &inner);
            mode = detail::risk_modes(ctx, k_critical);
            cession = detail::cvar_cession(ctx, mode, q);

            double th_lo = 0.0;
            double th_hi = 1.0;
            const double risk_top = detail::cvar_of_retained(ctx, cession, 0.0);
            const double risk_bot = detail::cvar_of_retained(ctx, cession, 1.0);
            if (risk_top < c - tol.outer_tol * c || risk_bot > c + tol.outer_tol * c) {
                std::ostringstream msg;
                msg << "gap at lambda = " << lambda_star << " cannot reach c = " << c
                    << ": theta sweep spans [" << risk_bot << ", " << risk_top << "]";
                throw solver_error(msg.str());
            }
            int th_iters = 0;
            for (;;) {
                theta = 0.5 * (th_lo + th_hi);
                risk = detail::cvar_of_retained(ctx, cession, theta);
                ++out.report.iterations.outer;
                if (std::abs(risk - c) <= tol.outer_tol * c) break;
                if (++th_iters > tol.max_iter)
                    throw solver_error("theta bisection hit the iteration cap");
                (risk > c ? th_lo : th_hi) = theta;
            }
        } else {
            double q_lo = q;  // q at the lambda just past the micro-jump: risk <= c
            double q_hi = lo > 0.0
                              ? detail::solve_q_star_impl(ctx, lo / (1.0 - alpha), lo, &inner)
                              : ctx.var_s;
            auto risk_at_q = [&](double qq) {
                cession = detail::cvar_cession(ctx, mode, qq);
                ++out.report.iterations.outer;
                return detail::cvar_of_retained(ctx, cession, 0.0);
            };
            if (q_hi < q_lo || risk_at_q(q_hi) < c - tol.outer_tol * c) {
                std::ostringstream msg;
                msg << "CVaR target " << c << " unreached (residual " << std::abs(risk - c)
                    << ") at the collapsed bracket lambda = " << lambda_star
                    << " and q interpolation cannot bridge it";
                throw solver_error(msg.str());
            }
            int q_iters = 0;
            for (;;) {
                q = 0.5 * (q_lo + q_hi);
                risk = risk_at_q(q);
                if (std::abs(risk - c) <= tol.outer_tol * c) break;
                if (++q_iters > tol.max_iter)
                    throw solver_error("q interpolation hit the iteration cap");
                (risk > c ? q_hi : q_lo) = q;
            }
        }
    } else {
        const double risk_lo_side = out.report.bracket.empty() ? ctx.cvar_s : [&] {
            double r = ctx.cvar_s;
            for (const auto& p : out.report.bracket) {
                if (p.lambda == lo) r = p.risk;
            }
            return r;
        }();
        out.report.flat_lambda_region = lo > 0.0 && std::abs(risk_lo_side - c) <= tol.outer_tol * c;
    }

    std::vector<double> theta_vec(x.risks(), 0.0);
    if (out.report.gap_case) {
        for (std::size_t k = 0; k < ctx.risks(); ++k) {
            if (detail::tied_to_k(ctx.ord.beta[k], k_critical))
                theta_vec[ctx.ord.perm[k]] = theta;
        }
    }
    out.contract = cvar_contract(x, loadings, lambda_star, alpha, q, theta_vec);
    out.report.lambda = lambda_star;
    out.report.inner_param = q;
    out.report.theta = theta;
    out.report.premium = premium(out.contract, x, loadings);
    out.report.risk_value = cvar_alpha(retained(x, out.contract), alpha);
    out.report.objective = out.report.premium;
    out.report.outer_residual = std::abs(out.report.risk_value - c);
    out.report.iterations.inner = inner;
    return out;
}

/// VaR_alpha(Z) <= c at minimal premium: cover the cheapest cession-cost mass
/// alpha, splitting the straddling cost atom's weight when needed (the
/// empirical realization of the randomization variable B).
inline VarSolution solve_constrained_var(const SampleMatrix& x,
                                         const std::vector<double>& loadings, double c,
                                         double alpha) {
    x.validate();
    detail::check_alpha(alpha);
    if (c < 0.0) throw config_error("VaR bound c must be nonnegative");
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

    EmpiricalVariable cost;
    cost.weights = x.weights;
    cost.values.resize(m);
    for (std::size_t s = 0; s < m; ++s) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += ord.beta[k] * phi(s, k);
        cost.values[s] = acc;
    }
    const double q = var_alpha(cost, alpha);

    NeumaierSum below;
    for (std::size_t s = 0; s < m; ++s) {
        if (cost.values[s] < q) below.add(x.weights[s]);
    }
    // The split is padded by 1e-12 mass: an exactly-alpha covered mass sits on
    // the quantile knife edge and summation rounding could tip VaR(Z) onto an
    // uncovered atom.
    double need = alpha - below.value() + 1e-12;

    std::vector<double> coverage(m, 0.0);
    std::optional<std::pair<std::size_t, double>> split;  // sample, covered fraction
    for (std::size_t s = 0; s < m; ++s) {
        if (cost.values[s] < q) {
            coverage[s] = 1.0;
        } else if (cost.values[s] == q && need > 0.0) {
            const double w = x.weights[s];
            if (need >= w) {
                coverage[s] = 1.0;
                need -= w;
            } else {
                split = {s, need / w};
                need = 0.0;
            }
        }
    }

    VarSolution out;
    if (split) {
        const auto [s0, frac] = *split;
        SampleMatrix ext;
        ext.data = Matrix(m + 1, n);
        ext.weights = x.weights;
        for (std::size_t s = 0; s < m; ++s) {
            for (std::size_t i = 0; i < n; ++i) ext.data(s, i) = x.data(s, i);
        }
        for (std::size_t i = 0; i < n; ++i) ext.data(m, i) = x.data(s0, i);
        const double w0 = x.weights[s0];
        ext.weights[s0] = frac * w0;
        ext.weights.push_back((1.0 - frac) * w0);
        coverage[s0] = 1.0;
        coverage.push_back(0.0);
        out.samples = std::move(ext);
    } else {
        out.samples = x;
    }

    out.contract = var_contract(out.samples, loadings, c, q, coverage);
    const auto& cov = std::get<VarParams>(out.contract.params).coverage;
    NeumaierSum mass;
    for (std::size_t s = 0; s < out.samples.samples(); ++s) {
        mass.add(cov[s] * out.samples.weights[s]);
    }

    out.report.measure = "var";
    out.report.mode = "constrained";
    out.report.inner_param = q;
    out.report.coverage_mass = mass.value();
    out.report.premium = premium(out.contract, out.samples, loadings);
    out.report.risk_value = var_alpha(retained(out.samples, out.contract), alpha);
    out.report.objective = out.report.premium;
    return out;
}

/// One row of a lambda sweep.
struct CurvePoint {
    double lambda = 0.0;
    double inner_param = 0.0;
    double risk_value = 0.0;
    double premium = 0.0;
    double objective = 0.0;
};

/// Penalized solve at each grid lambda (variance or CVaR measure); the rows
/// expose the discontinuity structure of the risk-in-lambda curve.
inline std::vector<CurvePoint> lambda_curve(const SampleMatrix& x,
                                            const std::vector<double>& loadings, double alpha,
                                            RiskMeasure::Kind measure,
                                            const std::vector<double>& lambda_grid,
                                            const Tolerances& tol = {}) {
    tol.validate();
    std::vector<CurvePoint> out;
    out.reserve(lambda_grid.size());
    if (lambda_grid.empty()) return out;

    if (measure == RiskMeasure::Kind::variance) {
        const auto ctx = detail::make_variance_context(x, loadings);
        for (double lambda : lambda_grid) {
            CurvePoint p;
            p.lambda = lambda;
            if (lambda == 0.0) {
                p.inner_param = ctx.expected_s;
                p.risk_value = variance(x.total_loss());
            } else {
                const auto sig = detail::solve_sigma_impl(ctx, lambda, tol,
                                                          SigmaMethod::bisection);
                const auto point = detail::variance_point(ctx, lambda, sig.sigma);
                p.inner_param = sig.sigma;
                p.risk_value = point.risk;
                p.premium = point.premium;
            }
            p.objective = p.premium + lambda * p.risk_value;
            out.push_back(p);
        }
        return out;
    }

    const auto ctx = detail::make_cvar_context(x, loadings, alpha);
    for (double lambda : lambda_grid) {
        CurvePoint p;
        p.lambda = lambda;
        if (lambda == 0.0) {
            p.risk_value = ctx.cvar_s;
        } else {
            const double k_critical = lambda / (1.0 - alpha);
            const double q = detail::solve_q_star_impl(ctx, k_critical, lambda);
            const auto mode = detail::risk_modes(ctx, k_critical);
            const auto cession = detail::cvar_cession(ctx, mode, q);
            p.inner_param = q;
            p.risk_value = detail::cvar_of_retained(ctx, cession, 0.0);
            NeumaierSum prem;
            for (std::size_t k = 0; k < ctx.risks(); ++k) {
                if (mode[k] != 1) continue;
                NeumaierSum col;
                for (std::size_t s = 0; s < ctx.samples(); ++s) {
                    double suffix = 0.0;
                    for (std::size_t j = ctx.risks(); j-- > k;) suffix += ctx.xs(s, j);
                    col.add(ctx.weights[s] * clip(suffix - q, 0.0, ctx.xs(s, k)));
                }
                prem.add(ctx.ord.beta[k] * col.value());
            }
            p.premium = prem.value();
        }
        p.objective = p.premium + lambda * p.risk_value;
        out.push_back(p);
    }
    return out;
}

/// h(eta) = eta - E[Z_eta] along an eta grid for fixed lambda.
inline std::vector<std::pair<double, double>> h_curve(const SampleMatrix& x,
                                                      const std::vector<double>& loadings,
                                                      double lambda,
                                                      const std::vector<double>& eta_grid) {
    if (!(lambda > 0.0)) throw config_error("lambda must be positive");
    const auto ctx = detail::make_variance_context(x, loadings);
    std::vector<double> tk(ctx.risks());
    for (std::size_t k = 0; k < ctx.risks(); ++k) tk[k] = ctx.ord.beta[k] / (2.0 * lambda);
    std::vector<std::pair<double, double>> out;
    out.reserve(eta_grid.size());
    for (double eta : eta_grid) {
        out.emplace_back(eta, eta - detail::mean_z_eta(ctx, tk, eta));
    }
    return out;
}

}  // namespace definetti

#pragma once

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "definetti/common.hpp"
#include "definetti/contracts.hpp"
#include "definetti/oracle.hpp"
#include "definetti/portfolio.hpp"
#include "definetti/solvers.hpp"

namespace definetti {

/// One solve/simulate/curve/verify run, as read from the JSON config plus
/// command-line overrides.
struct RunConfig {
    PortfolioSpec portfolio;
    std::string measure;  // variance | cvar | var
    std::string mode;     // penalized | constrained
    std::optional<double> lambda;
    std::optional<double> c;
    Tolerances tolerances;

    std::string out_report;    // solve/verify JSON
    std::string out_contract;  // solve contract CSV
    std::string out_csv;       // simulate samples / curve rows

    // curve options
    std::string sweep = "lambda";  // lambda | eta
    double grid_min = 0.0;
    double grid_max = 0.0;
    int grid_steps = 0;

    void validate_for_solve() const {
        if (measure != "variance" && measure != "cvar" && measure != "var")
            throw config_error("measure must be variance, cvar or var");
        if (mode != "penalized" && mode != "constrained")
            throw config_error("mode must be penalized or constrained");
        if (measure == "var" && mode == "penalized")
            throw config_error("the var measure only supports the constrained mode");
        if (mode == "penalized") {
            if (!lambda || c) throw config_error("penalized mode needs lambda (and no c)");
        } else {
            if (!c || lambda) throw config_error("constrained mode needs c (and no lambda)");
        }
        if (measure != "variance" && !(portfolio.alpha > 0.0 && portfolio.alpha < 1.0))
            throw config_error("alpha in (0,1) is required for cvar/var measures");
        if (measure == "variance") {
            for (const auto& r : portfolio.risks) {
                if (const auto* p = std::get_if<ShiftedParetoSpec>(&r)) {
                    if (!(p->tail_exponent > 2.0))
                        throw config_error(
                            "variance measure needs pareto tail exponent > 2 (finite variance)");
                }
            }
        }
        tolerances.validate();
    }
};

namespace detail {

inline nlohmann::json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw config_error("config parse error in " + path + ": " + e.what());
    }
    return j;
}

inline PortfolioSpec parse_portfolio(const nlohmann::json& j) {
    PortfolioSpec spec;
    try {
        spec.loadings = j.at("loadings").get<std::vector<double>>();
        if (j.contains("alpha")) spec.alpha = j.at("alpha").get<double>();
        if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("sample_count"))
            spec.sample_count = j.at("sample_count").get<std::size_t>();
        const auto& risks = j.at("risks");
        if (risks.is_object() && risks.contains("file")) {
            spec.sample_file = risks.at("file").get<std::string>();
        } else if (risks.is_array()) {
            for (const auto& r : risks) {
                const std::string kind = r.at("kind").get<std::string>();
                if (kind == "gamma") {
                    spec.risks.push_back(GammaSpec{r.at("shape").get<double>(),
                                                   r.at("rate").get<double>()});
                } else if (kind == "shifted_pareto") {
                    spec.risks.push_back(
                        ShiftedParetoSpec{r.at("threshold").get<double>(),
                                          r.at("tail_exponent").get<double>()});
                } else {
                    throw config_error("unknown risk kind: " + kind);
                }
            }
        } else {
            throw config_error("portfolio.risks must be a list or {\"file\": path}");
        }
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("portfolio config error: ") + e.what());
    }
    return spec;
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
    RunConfig cfg;
    try {
        cfg.portfolio = parse_portfolio(j.at("portfolio"));
        if (j.contains("measure")) cfg.measure = j.at("measure").get<std::string>();
        if (j.contains("mode")) cfg.mode = j.at("mode").get<std::string>();
        if (j.contains("lambda")) cfg.lambda = j.at("lambda").get<double>();
        if (j.contains("c")) cfg.c = j.at("c").get<double>();
        if (j.contains("tolerances")) {
            const auto& t = j.at("tolerances");
            if (t.contains("inner_tol")) cfg.tolerances.inner_tol = t.at("inner_tol");
            if (t.contains("outer_tol")) cfg.tolerances.outer_tol = t.at("outer_tol");
            if (t.contains("max_iter")) cfg.tolerances.max_iter = t.at("max_iter");
        }
        if (j.contains("output")) {
            const auto& o = j.at("output");
            if (o.contains("report")) cfg.out_report = o.at("report");
            if (o.contains("contract_csv")) cfg.out_contract = o.at("contract_csv");
            if (o.contains("csv")) cfg.out_csv = o.at("csv");
        }
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("config error: ") + e.what());
    }
    return cfg;
}

inline nlohmann::json config_echo(const RunConfig& cfg) {
    nlohmann::json p;
    p["loadings"] = cfg.portfolio.loadings;
    p["alpha"] = cfg.portfolio.alpha;
    p["seed"] = cfg.portfolio.seed;
    p["sample_count"] = cfg.portfolio.sample_count;
    if (!cfg.portfolio.sample_file.empty()) p["risks"] = {{"file", cfg.portfolio.sample_file}};
    nlohmann::json j;
    j["portfolio"] = p;
    j["measure"] = cfg.measure;
    j["mode"] = cfg.mode;
    if (cfg.lambda) j["lambda"] = *cfg.lambda;
    if (cfg.c) j["c"] = *cfg.c;
    j["tolerances"] = {{"inner_tol", cfg.tolerances.inner_tol},
                       {"outer_tol", cfg.tolerances.outer_tol},
                       {"max_iter", cfg.tolerances.max_iter}};
    return j;
}

inline nlohmann::json report_json(const SolveReport& r) {
    nlohmann::json j;
    j["measure"] = r.measure;
    j["mode"] = r.mode;
    j["lambda"] = r.lambda;
    j["inner_param"] = r.inner_param;
    if (r.measure == "variance") j["sigma"] = r.inner_param;
    if (r.measure == "cvar" || r.measure == "var") j["q"] = r.inner_param;
    j["theta"] = r.theta;
    j["tied_index"] = r.tied_index;
    j["coverage_mass"] = r.coverage_mass;
    j["premium"] = r.premium;
    j["risk_value"] = r.risk_value;
    j["objective"] = r.objective;
    j["iterations"] = {{"inner", r.iterations.inner}, {"outer", r.iterations.outer}};
    j["inner_residual"] = r.inner_residual;
    j["outer_residual"] = r.outer_residual;
    j["gap_case"] = r.gap_case;
    j["flat_lambda_region"] = r.flat_lambda_region;
    nlohmann::json bracket = nlohmann::json::array();
    for (const auto& p : r.bracket) bracket.push_back({{"lambda", p.lambda}, {"risk", p.risk}});
    j["bracket"] = bracket;
    return j;
}

inline void write_json(const nlohmann::json& j, const std::string& path) {
    if (path.empty()) {
        std::cout << j.dump(2) << "\n";
        return;
    }
    std::ofstream out(path);
    if (!out) throw data_error("cannot write output file: " + path);
    out << j.dump(2) << "\n";
}

inline std::vector<double> make_grid(double lo, double hi, int steps) {
    if (steps <= 0) return {};
    if (steps == 1) return {lo};
    std::vector<double> g(static_cast<std::size_t>(steps));
    for (int k = 0; k < steps; ++k) {
        g[static_cast<std::size_t>(k)] = lo + (hi - lo) * k / (steps - 1);
    }
    return g;
}

}  // namespace detail

/// `simulate`: draw the parametric sample matrix, write it as CSV, print
/// per-column moments.
inline void cmd_simulate(const RunConfig& cfg) {
    if (!cfg.portfolio.sample_file.empty())
        throw config_error("simulate needs a parametric portfolio, not a sample file");
    const SampleMatrix x = build_portfolio(cfg.portfolio);
    const std::string path = cfg.out_csv.empty() ? "samples.csv" : cfg.out_csv;
    save_samples(path, x);
    std::cout << "wrote " << x.samples() << " samples x " << x.risks() << " risks to " << path
              << "\n";
    for (std::size_t i = 0; i < x.risks(); ++i) {
        const auto col = x.risk_column(i);
        std::cout << "  X" << (i + 1) << ": mean=" << mean(col) << " var=" << variance(col)
                  << "\n";
    }
}

/// `solve`: dispatch to the configured solver, write the report JSON and the
/// contract CSV.
inline void cmd_solve(const RunConfig& cfg) {
    cfg.validate_for_solve();
    const SampleMatrix x = build_portfolio(cfg.portfolio);
    const auto t0 = std::chrono::steady_clock::now();

    SolveReport report;
    Matrix payout;
    std::vector<double> out_weights = x.weights;

    if (cfg.measure == "variance") {
        SolveResult res = cfg.mode == "penalized"
                              ? solve_penalized_variance(x, cfg.portfolio.loadings,
                                                         *cfg.lambda, cfg.tolerances)
                              : solve_constrained_variance(x, cfg.portfolio.loadings, *cfg.c,
                                                           cfg.tolerances);
        report = res.report;
        payout = std::move(res.contract.payout);
    } else if (cfg.measure == "cvar") {
        SolveResult res = cfg.mode == "penalized"
                              ? solve_penalized_cvar(x, cfg.portfolio.loadings, *cfg.lambda,
                                                     cfg.portfolio.alpha, cfg.tolerances)
                              : solve_constrained_cvar(x, cfg.portfolio.loadings, *cfg.c,
                                                       cfg.portfolio.alpha, cfg.tolerances);
        report = res.report;
        payout = std::move(res.contract.payout);
    } else {
        VarSolution res =
            solve_constrained_var(x, cfg.portfolio.loadings, *cfg.c, cfg.portfolio.alpha);
        report = res.report;
        payout = std::move(res.contract.payout);
        out_weights = res.samples.weights;
    }

    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - t0;
    nlohmann::json j = detail::report_json(report);
    j["samples"] = payout.rows;
    j["risks"] = payout.cols;
    j["wall_time_seconds"] = elapsed.count();
    j["config"] = detail::config_echo(cfg);
    detail::write_json(j, cfg.out_report);
    if (!cfg.out_contract.empty()) save_contract_csv(cfg.out_contract, payout, out_weights);

    std::cerr << cfg.measure << "/" << cfg.mode << ": lambda=" << report.lambda
              << " inner=" << report.inner_param << " premium=" << report.premium
              << " risk=" << report.risk_value << "\n";
}

/// `curve`: lambda sweep of the penalized solve (columns
/// lambda,inner_param,risk_value,premium,objective) or, with sweep=eta, the
/// fixed-point diagnostic h(eta) at the configured lambda.
inline void cmd_curve(const RunConfig& cfg) {
    if (cfg.grid_steps <= 0) throw config_error("curve needs --grid-steps >= 1");
    const SampleMatrix x = build_portfolio(cfg.portfolio);
    const std::string path = cfg.out_csv.empty() ? "curve.csv" : cfg.out_csv;
    std::ofstream out(path);
    if (!out) throw data_error("cannot write curve file: " + path);
    char buf[32];
    auto put = [&](double v, char sep) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out << buf << sep;
    };

    const auto grid = detail::make_grid(cfg.grid_min, cfg.grid_max, cfg.grid_steps);
    if (cfg.sweep == "eta") {
        if (!cfg.lambda) throw config_error("eta sweep needs a fixed lambda");
        out << "eta,h\n";
        for (const auto& [eta, h] :
             h_curve(x, cfg.portfolio.loadings, *cfg.lambda, grid)) {
            put(eta, ',');
            put(h, '\n');
        }
    } else if (cfg.sweep == "lambda") {
        if (cfg.measure != "variance" && cfg.measure != "cvar")
            throw config_error("lambda curves are defined for the variance and cvar measures");
        const auto kind = cfg.measure == "variance" ? RiskMeasure::Kind::variance
                                                    : RiskMeasure::Kind::cvar;
        if (kind == RiskMeasure::Kind::cvar &&
            !(cfg.portfolio.alpha > 0.0 && cfg.portfolio.alpha < 1.0))
            throw config_error("alpha in (0,1) is required for cvar curves");
        out << "lambda,inner_param,risk_value,premium,objective\n";
        for (const auto& p : lambda_curve(x, cfg.portfolio.loadings, cfg.portfolio.alpha,
                                          kind, grid, cfg.tolerances)) {
            put(p.lambda, ',');
            put(p.inner_param, ',');
            put(p.risk_value, ',');
            put(p.premium, ',');
            put(p.objective, '\n');
        }
    } else {
        throw config_error("sweep must be lambda or eta");
    }
    std::cerr << "wrote " << cfg.grid_steps << " rows to " << path << "\n";
}

/// `verify`: run the matching brute-force oracle against the solver and
/// report the objective (and samplewise Z) gaps.
inline void cmd_verify(const RunConfig& cfg) {
    cfg.validate_for_solve();
    const SampleMatrix x = build_portfolio(cfg.portfolio);
    if (x.samples() * x.risks() > 100000)
        throw config_error("instance too large for verification: m*n must stay <= 1e5");

    nlohmann::json j;
    j["measure"] = cfg.measure;
    bool pass = false;

    if (cfg.measure == "variance") {
        const double lambda =
            cfg.mode == "penalized"
                ? *cfg.lambda
                : solve_constrained_variance(x, cfg.portfolio.loadings, *cfg.c, cfg.tolerances)
                      .report.lambda;
        const auto solved =
            solve_penalized_variance(x, cfg.portfolio.loadings, lambda, cfg.tolerances);
        const auto oracle = oracle_penalized_variance(x, cfg.portfolio.loadings, lambda);
        const auto z_solver = retained(x, solved.contract);
        Contract oracle_contract{oracle.contract, solved.contract.params};
        const auto z_oracle = retained(x, oracle_contract);
        double z_gap = 0.0;
        for (std::size_t s = 0; s < x.samples(); ++s)
            z_gap = std::max(z_gap, std::abs(z_solver.values[s] - z_oracle.values[s]));
        const double gap = std::abs(solved.report.objective - oracle.objective);
        const double tol = 1e-4 * (1.0 + std::abs(solved.report.objective));
        pass = gap <= tol && z_gap <= 1e-3;
        j["lambda"] = lambda;
        j["objective_solver"] = solved.report.objective;
        j["objective_oracle"] = oracle.objective;
        j["objective_gap"] = gap;
        j["objective_tolerance"] = tol;
        j["z_gap"] = z_gap;
        j["z_tolerance"] = 1e-3;
        j["oracle_converged"] = oracle.converged;
    } else if (cfg.measure == "cvar") {
        const double lambda =
            cfg.mode == "penalized"
                ? *cfg.lambda
                : solve_constrained_cvar(x, cfg.portfolio.loadings, *cfg.c,
                                         cfg.portfolio.alpha, cfg.tolerances)
                      .report.lambda;
        const auto solved = solve_penalized_cvar(x, cfg.portfolio.loadings, lambda,
                                                 cfg.portfolio.alpha, cfg.tolerances);
        const auto oracle =
            oracle_penalized_cvar(x, cfg.portfolio.loadings, lambda, cfg.portfolio.alpha);
        const double gap = std::abs(solved.report.objective - oracle.objective);
        const double tol = 1e-3 * (1.0 + std::abs(solved.report.objective));
        pass = gap <= tol;
        j["lambda"] = lambda;
        j["objective_solver"] = solved.report.objective;
        j["objective_oracle"] = oracle.objective;
        j["objective_gap"] = gap;
        j["objective_tolerance"] = tol;
        j["oracle_converged"] = oracle.converged;
    } else {
        const auto solved =
            solve_constrained_var(x, cfg.portfolio.loadings, *cfg.c, cfg.portfolio.alpha);
        const auto oracle =
            oracle_var_enumerate(x, cfg.portfolio.loadings, *cfg.c, cfg.portfolio.alpha);
        const double gap = std::abs(solved.report.premium - oracle.objective);
        const double tol = 1e-9 * (1.0 + std::abs(oracle.objective));
        pass = gap <= tol;
        j["premium_solver"] = solved.report.premium;
        j["premium_oracle"] = oracle.objective;
        j["premium_gap"] = gap;
        j["premium_tolerance"] = tol;
    }

    j["pass"] = pass;
    detail::write_json(j, cfg.out_report);
    if (!pass) throw solver_error("verification failed (see report)");
}

}  // namespace definetti

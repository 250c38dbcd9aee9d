#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "definetti/cli.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::string measure;
    std::string mode;
    std::optional<double> lambda;
    std::optional<double> c;
    std::optional<double> alpha;
    std::optional<std::uint64_t> seed;
    std::string samples;
    std::string out;
    std::string sweep;
    std::optional<double> grid_min;
    std::optional<double> grid_max;
    std::optional<int> grid_steps;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "JSON run configuration")->required();
    cmd->add_option("--measure", f.measure, "variance | cvar | var");
    cmd->add_option("--mode", f.mode, "penalized | constrained");
    cmd->add_option("--lambda", [&f](const CLI::results_t& r) {
        f.lambda = std::stod(r[0]);
        return true;
    }, "penalty weight (penalized mode)");
    cmd->add_option("--c", [&f](const CLI::results_t& r) {
        f.c = std::stod(r[0]);
        return true;
    }, "risk bound (constrained mode)");
    cmd->add_option("--alpha", [&f](const CLI::results_t& r) {
        f.alpha = std::stod(r[0]);
        return true;
    }, "confidence level for cvar/var");
    cmd->add_option("--seed", [&f](const CLI::results_t& r) {
        f.seed = std::stoull(r[0]);
        return true;
    }, "master RNG seed override");
    cmd->add_option("--samples", f.samples, "sample CSV overriding the portfolio source");
    cmd->add_option("--out", f.out, "output path override");
    cmd->add_option("--sweep", f.sweep, "curve sweep variable: lambda | eta");
    cmd->add_option("--grid-min", [&f](const CLI::results_t& r) {
        f.grid_min = std::stod(r[0]);
        return true;
    }, "sweep grid lower bound");
    cmd->add_option("--grid-max", [&f](const CLI::results_t& r) {
        f.grid_max = std::stod(r[0]);
        return true;
    }, "sweep grid upper bound");
    cmd->add_option("--grid-steps", [&f](const CLI::results_t& r) {
        f.grid_steps = std::stoi(r[0]);
        return true;
    }, "sweep grid point count");
}

definetti::RunConfig build_config(const CommonFlags& f, const std::string& command) {
    auto cfg = definetti::detail::parse_run_config(definetti::detail::load_json(f.config_path));
    if (!f.measure.empty()) cfg.measure = f.measure;
    if (!f.mode.empty()) cfg.mode = f.mode;
    if (f.lambda) {
        cfg.lambda = *f.lambda;
        cfg.c.reset();
    }
    if (f.c) {
        cfg.c = *f.c;
        cfg.lambda.reset();
    }
    if (f.alpha) cfg.portfolio.alpha = *f.alpha;
    if (f.seed) cfg.portfolio.seed = *f.seed;
    if (!f.samples.empty()) {
        cfg.portfolio.sample_file = f.samples;
        cfg.portfolio.risks.clear();
    }
    if (!f.out.empty()) {
        if (command == "simulate" || command == "curve") {
            cfg.out_csv = f.out;
        } else {
            cfg.out_report = f.out;
        }
    }
    if (!f.sweep.empty()) cfg.sweep = f.sweep;
    if (f.grid_min) cfg.grid_min = *f.grid_min;
    if (f.grid_max) cfg.grid_max = *f.grid_max;
    if (f.grid_steps) cfg.grid_steps = *f.grid_steps;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Optimal multi-risk reinsurance solver (variance / CVaR / VaR)"};
    app.require_subcommand(1);

    CommonFlags flags;
    auto* simulate = app.add_subcommand("simulate", "draw and save the portfolio samples");
    auto* solve = app.add_subcommand("solve", "solve the configured reinsurance problem");
    auto* curve = app.add_subcommand("curve", "sweep lambda (or eta) and emit CSV rows");
    auto* verify = app.add_subcommand("verify", "cross-check the solver against the oracle");
    for (auto* cmd : {simulate, solve, curve, verify}) add_common_flags(cmd, flags);

    CLI11_PARSE(app, argc, argv);

    try {
        if (simulate->parsed()) {
            definetti::cmd_simulate(build_config(flags, "simulate"));
        } else if (solve->parsed()) {
            definetti::cmd_solve(build_config(flags, "solve"));
        } else if (curve->parsed()) {
            definetti::cmd_curve(build_config(flags, "curve"));
        } else if (verify->parsed()) {
            definetti::cmd_verify(build_config(flags, "verify"));
        }
    } catch (const definetti::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const definetti::data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const definetti::solver_error& e) {
        std::cerr << "solver error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

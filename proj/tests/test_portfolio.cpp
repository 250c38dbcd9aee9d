#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "definetti/portfolio.hpp"

using namespace definetti;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

void write_file(const std::filesystem::path& p, const std::string& body) {
    std::ofstream out(p);
    out << body;
}

}  // namespace

TEST_CASE("gamma sampler moments") {
    // Gamma(1/2, 1/2): mean 1, variance 2.
    const auto draws = sample_gamma(0.5, 0.5, 1000000, 1234);
    const auto v = EmpiricalVariable::uniform(draws);
    CHECK_THAT(mean(v), WithinAbs(1.0, 0.01));
    CHECK_THAT(variance(v), WithinAbs(2.0, 0.05));

    // Gamma(2, 4): mean 0.5, variance 0.125.
    const auto d2 = sample_gamma(2.0, 4.0, 100000, 77);
    const auto v2 = EmpiricalVariable::uniform(d2);
    CHECK_THAT(mean(v2), WithinAbs(0.5, 0.01));
    CHECK_THAT(variance(v2), WithinAbs(0.125, 0.005));

    // Moment sanity at the 5-sigma level across a few seeds.
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 99ULL}) {
        const std::size_t m = 200000;
        const auto d = sample_gamma(0.5, 0.5, m, seed);
        const double mu = mean(EmpiricalVariable::uniform(d));
        CHECK(std::abs(mu - 1.0) <= 5.0 * std::sqrt(2.0 / static_cast<double>(m)));
    }
}

TEST_CASE("gamma sampler determinism and validation") {
    const auto a = sample_gamma(1.0, 1.0, 1, 4242);
    const auto b = sample_gamma(1.0, 1.0, 1, 4242);
    REQUIRE(a.size() == 1);
    CHECK(a[0] == b[0]);
    CHECK(a[0] > 0.0);
    CHECK_THROWS_AS(sample_gamma(0.0, 1.0, 10, 1), config_error);
    CHECK_THROWS_AS(sample_gamma(1.0, -1.0, 10, 1), config_error);
}

TEST_CASE("shifted pareto sampler") {
    // t=3, h=4: mean 1, variance 2.
    const auto draws = sample_shifted_pareto(3.0, 4.0, 1000000, 555);
    const auto v = EmpiricalVariable::uniform(draws);
    CHECK_THAT(mean(v), WithinAbs(1.0, 0.01));
    CHECK_THAT(variance(v), WithinAbs(2.0, 0.1));
    CHECK_THROWS_AS(sample_shifted_pareto(3.0, 1.0, 10, 1), config_error);
    CHECK_THROWS_AS(sample_shifted_pareto(0.0, 4.0, 10, 1), config_error);
}

TEST_CASE("shifted pareto inverse CDF values") {
    // The map u -> t((1-u)^{-1/h} - 1) at u = 0 and at u = 1-(3/4)^4.
    const double t = 3.0;
    const double h = 4.0;
    auto icdf = [&](double u) { return t * (std::pow(1.0 - u, -1.0 / h) - 1.0); };
    CHECK(icdf(0.0) == 0.0);
    CHECK_THAT(icdf(1.0 - std::pow(0.75, 4)), WithinAbs(1.0, 1e-12));
}

TEST_CASE("shifted pareto empirical CDF within the DKW band") {
    const std::size_t m = 200000;
    auto draws = sample_shifted_pareto(3.0, 4.0, m, 31337);
    std::sort(draws.begin(), draws.end());
    const double band = std::sqrt(std::log(2.0 / 1e-3) / (2.0 * static_cast<double>(m)));
    auto model_cdf = [](double x) { return 1.0 - std::pow(3.0 / (x + 3.0), 4.0); };
    for (std::size_t k = 0; k < m; k += 997) {
        const double empirical = static_cast<double>(k + 1) / static_cast<double>(m);
        CHECK(std::abs(empirical - model_cdf(draws[k])) <= band);
    }
}

TEST_CASE("load_samples parses and validates") {
    const auto good = temp_file("definetti_good.csv");
    write_file(good, "X1\n0\n2\n");
    const auto x = load_samples(good.string());
    CHECK(x.samples() == 2);
    CHECK(x.risks() == 1);
    CHECK(x.data(0, 0) == 0.0);
    CHECK(x.data(1, 0) == 2.0);
    CHECK(x.weights[0] == 0.5);

    const auto weighted = temp_file("definetti_weighted.csv");
    write_file(weighted, "X1,weight\n1,0.25\n3,0.75\n");
    const auto xw = load_samples(weighted.string());
    CHECK(xw.weights[0] == 0.25);
    CHECK(xw.weights[1] == 0.75);

    const auto renorm = temp_file("definetti_renorm.csv");
    write_file(renorm, "X1,weight\n1,1\n3,3\n");
    const auto xr = load_samples(renorm.string());
    CHECK(xr.weights[0] == 0.25);
    CHECK(xr.weights[1] == 0.75);

    const auto negative = temp_file("definetti_negative.csv");
    write_file(negative, "X1\n0\n-1\n");
    CHECK_THROWS_AS(load_samples(negative.string()), data_error);

    const auto ragged = temp_file("definetti_ragged.csv");
    write_file(ragged, "X1,X2\n1,2\n3\n");
    CHECK_THROWS_AS(load_samples(ragged.string()), data_error);

    const auto empty = temp_file("definetti_empty.csv");
    write_file(empty, "");
    CHECK_THROWS_AS(load_samples(empty.string()), data_error);

    const auto headeronly = temp_file("definetti_headeronly.csv");
    write_file(headeronly, "X1\n");
    CHECK_THROWS_AS(load_samples(headeronly.string()), data_error);

    CHECK_THROWS_AS(load_samples("/nonexistent/definetti.csv"), data_error);
}

TEST_CASE("sample CSV round trip is lossless") {
    PortfolioSpec spec;
    spec.loadings = {0.1, 0.25};
    spec.seed = 99;
    spec.sample_count = 512;
    spec.risks = {GammaSpec{0.5, 0.5}, ShiftedParetoSpec{3.0, 4.0}};
    const auto x = build_portfolio(spec);

    const auto path = temp_file("definetti_roundtrip.csv");
    save_samples(path.string(), x);
    const auto back = load_samples(path.string());
    REQUIRE(back.samples() == x.samples());
    REQUIRE(back.risks() == x.risks());
    CHECK(back.data.data == x.data.data);  // bit-exact through %.17g
}

TEST_CASE("build_portfolio reproducibility and substreams") {
    PortfolioSpec spec;
    spec.loadings = {0.1, 0.25};
    spec.seed = 2024;
    spec.sample_count = 4096;
    spec.risks = {GammaSpec{0.5, 0.5}, ShiftedParetoSpec{3.0, 4.0}};

    const auto a = build_portfolio(spec);
    const auto b = build_portfolio(spec);
    CHECK(a.data.data == b.data.data);  // bitwise identical

    // Columns come from independent substreams: changing the second risk's
    // parameters must not disturb the first column.
    auto spec2 = spec;
    spec2.risks[1] = ShiftedParetoSpec{5.0, 3.0};
    const auto c = build_portfolio(spec2);
    for (std::size_t s = 0; s < a.samples(); ++s) {
        REQUIRE(c.data(s, 0) == a.data(s, 0));
    }

    auto spec3 = spec;
    spec3.seed = 2025;
    const auto d = build_portfolio(spec3);
    CHECK(d.data.data != a.data.data);
}

TEST_CASE("build_portfolio from a file matches load_samples") {
    const auto path = temp_file("definetti_fromfile.csv");
    write_file(path, "X1,X2\n1,2\n3,4\n");
    PortfolioSpec spec;
    spec.loadings = {0.1, 0.2};
    spec.sample_file = path.string();
    const auto x = build_portfolio(spec);
    const auto direct = load_samples(path.string());
    CHECK(x.data.data == direct.data.data);
    CHECK(x.weights == direct.weights);
}

TEST_CASE("portfolio validation rejects degenerate configurations") {
    PortfolioSpec spec;
    spec.loadings = {0.1, 0.0};
    spec.sample_count = 10;
    spec.risks = {GammaSpec{1, 1}, GammaSpec{1, 1}};
    CHECK_THROWS_AS(spec.validate(), config_error);  // beta = 0: full cession optimal

    spec.loadings = {0.1, 0.2};
    spec.sample_count = 0;
    CHECK_THROWS_AS(spec.validate(), config_error);

    spec.sample_count = 10;
    spec.risks = {GammaSpec{1, 1}};
    CHECK_THROWS_AS(spec.validate(), config_error);  // loading/risk count mismatch

    spec.risks.clear();
    spec.sample_file = "";
    CHECK_THROWS_AS(spec.validate(), config_error);  // no source
}

TEST_CASE("example portfolio at desk scale") {
    PortfolioSpec spec;
    spec.loadings = {0.1, 0.25};
    spec.seed = 20260810;
    spec.sample_count = 1000000;
    spec.risks = {GammaSpec{0.5, 0.5}, ShiftedParetoSpec{3.0, 4.0}};
    const auto x = build_portfolio(spec);
    REQUIRE(x.samples() == 1000000);
    REQUIRE(x.risks() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK_THAT(mean(x.risk_column(i)), WithinAbs(1.0, 0.01));
    }
}

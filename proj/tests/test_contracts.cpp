#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "definetti/contracts.hpp"
#include "test_support.hpp"

using namespace definetti;
using Catch::Matchers::WithinAbs;
using testsupport::Gen;

TEST_CASE("tail sums") {
    Matrix d(3, 2);
    d(0, 0) = 1.0;
    d(0, 1) = 2.0;
    d(1, 0) = 5.0;
    d(1, 1) = 0.0;
    d(2, 0) = 0.0;
    d(2, 1) = 0.0;
    const auto x = SampleMatrix::uniform(std::move(d));
    const auto t = tail_sums(x);
    CHECK(t(0, 0) == 3.0);
    CHECK(t(0, 1) == 2.0);
    CHECK(t(0, 2) == 0.0);
    CHECK(t(1, 0) == 5.0);
    CHECK(t(1, 2) == 0.0);
    CHECK(t(2, 0) == 0.0);
    CHECK(t(2, 1) == 0.0);
}

TEST_CASE("variance contract on the two-atom instance") {
    const auto x = testsupport::two_atom();
    const auto r = variance_contract(x, {0.1}, 0.25, 0.2);
    CHECK(r.payout(0, 0) == 0.0);
    CHECK_THAT(r.payout(1, 0), WithinAbs(1.6, 1e-15));

    // Large lambda with sigma = 0: thresholds vanish, full cession.
    const auto full = variance_contract(x, {0.1}, 1e12, 0.0);
    CHECK_THAT(full.payout(1, 0), WithinAbs(2.0, 1e-9));

    // sigma beyond the support: zero contract.
    const auto zero = variance_contract(x, {0.1}, 0.25, 10.0);
    CHECK(zero.payout(0, 0) == 0.0);
    CHECK(zero.payout(1, 0) == 0.0);

    CHECK_THROWS_AS(variance_contract(x, {0.1}, 0.25, -0.1), config_error);
}

TEST_CASE("z_eta piecewise retained total") {
    const auto x = testsupport::two_atom();
    const auto z = z_eta(x, {0.1}, 0.25, 0.2);
    CHECK(z.values[0] == 0.0);
    CHECK_THAT(z.values[1], WithinAbs(0.4, 1e-15));
    CHECK_THAT(mean(z), WithinAbs(0.2, 1e-15));

    // eta beyond the support: no cession, Z = S.
    const auto zs = z_eta(x, {0.1}, 0.25, 100.0);
    CHECK(zs.values[1] == 2.0);

    // Tiny threshold: Z collapses onto beta/(2 lambda) + eta above it.
    const auto z0 = z_eta(x, {0.1}, 1e9, 0.0);
    CHECK_THAT(z0.values[1], WithinAbs(0.0, 1e-9));
}

TEST_CASE("z_eta matches the piecewise clamp display") {
    // Z equals the suffix sum clamped between consecutive thresholds
    // beta_{j-1}/(2 lambda) + eta and beta_j/(2 lambda) + eta.
    Gen gen(4001);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t n = gen.index(1, 4);
        const auto x = gen.matrix(gen.index(1, 40), n);
        auto beta = gen.loadings(n);
        std::sort(beta.begin(), beta.end());
        const double lambda = gen.real(0.02, 1.0);
        const double eta = gen.real(0.0, 4.0);
        const auto z = z_eta(x, beta, lambda, eta);

        for (std::size_t s = 0; s < x.samples(); ++s) {
            // suffix sums s_j for j = 1..n+1 and thresholds c_j.
            std::vector<double> suffix(n + 2, 0.0);
            for (std::size_t j = n; j >= 1; --j)
                suffix[j] = suffix[j + 1] + x.data(s, j - 1);
            double expected = std::numeric_limits<double>::quiet_NaN();
            for (std::size_t j = 1; j <= n && std::isnan(expected); ++j) {
                const double c_prev = j == 1 ? -std::numeric_limits<double>::infinity()
                                             : beta[j - 2] / (2.0 * lambda) + eta;
                const double c_j = beta[j - 1] / (2.0 * lambda) + eta;
                if (c_prev <= suffix[j] && suffix[j] <= c_j) expected = suffix[j];
                else if (suffix[j + 1] < c_j && c_j < suffix[j]) expected = c_j;
            }
            if (std::isnan(expected)) expected = suffix[n + 1];  // all ceded to zero tail
            REQUIRE_THAT(z.values[s], WithinAbs(expected, 1e-10));
        }
    }
}

TEST_CASE("layer identity: retained variance contract equals z_eta") {
    Gen gen(4002);
    for (int rep = 0; rep < 30; ++rep) {
        const std::size_t n = gen.index(1, 4);
        const auto x = gen.weighted_matrix(gen.index(1, 50), n);
        const auto beta = gen.loadings(n);
        const double lambda = gen.real(0.02, 1.0);
        const double sigma = gen.real(0.0, 3.0);
        const auto z_direct = z_eta(x, beta, lambda, sigma);
        const auto z_contract = retained(x, variance_contract(x, beta, lambda, sigma));
        for (std::size_t s = 0; s < x.samples(); ++s) {
            REQUIRE_THAT(z_contract.values[s], WithinAbs(z_direct.values[s], 1e-10));
        }
    }
}

TEST_CASE("cvar contract on the five-atom instance") {
    const auto x = testsupport::five_atom();
    const auto r = cvar_contract(x, {0.1}, 0.05, 0.8, 2.0);
    const std::vector<double> expected{0.0, 0.0, 0.0, 1.0, 2.0};
    for (std::size_t s = 0; s < 5; ++s) CHECK(r.payout(s, 0) == expected[s]);

    // K below every loading: nothing ceded.
    const auto none = cvar_contract(x, {0.1}, 0.001, 0.8, 0.0);
    for (std::size_t s = 0; s < 5; ++s) CHECK(none.payout(s, 0) == 0.0);

    // q = 0 and K above every loading: the payouts absorb S entirely.
    const auto all = cvar_contract(x, {0.1}, 1.0, 0.8, 0.0);
    for (std::size_t s = 0; s < 5; ++s) CHECK(all.payout(s, 0) == x.data(s, 0));

    CHECK_THROWS_AS(cvar_contract(x, {0.1}, 0.05, 0.8, 2.0, {1.5}), config_error);
}

TEST_CASE("phi map") {
    const auto x = testsupport::five_atom();
    const auto phi = phi_map(x, 2.0);
    const std::vector<double> expected{0.0, 0.0, 0.0, 1.0, 2.0};
    for (std::size_t s = 0; s < 5; ++s) CHECK(phi(s, 0) == expected[s]);

    const auto none = phi_map(x, 100.0);
    for (std::size_t s = 0; s < 5; ++s) CHECK(none(s, 0) == 0.0);

    // c = 0 cedes everything.
    const auto full = phi_map(x, 0.0);
    for (std::size_t s = 0; s < 5; ++s) CHECK(full(s, 0) == x.data(s, 0));
}

TEST_CASE("phi aggregation identity") {
    Gen gen(4003);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t n = gen.index(1, 5);
        const auto x = gen.matrix(gen.index(1, 30), n);
        const double c = gen.real(0.0, 6.0);
        const auto phi = phi_map(x, c);
        for (std::size_t s = 0; s < x.samples(); ++s) {
            double total = 0.0;
            double row_sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                total += phi(s, i);
                row_sum += x.data(s, i);
            }
            REQUIRE_THAT(total, WithinAbs(pos_part(row_sum - c), 1e-10));
        }
    }
}

TEST_CASE("var contract coverage semantics") {
    const auto x = testsupport::five_atom();
    const auto r = var_contract(x, {0.1}, 2.0, 0.1, {1.0, 1.0, 1.0, 1.0, 0.0});
    const std::vector<double> expected{0.0, 0.0, 0.0, 1.0, 0.0};
    for (std::size_t s = 0; s < 5; ++s) CHECK(r.payout(s, 0) == expected[s]);
    const auto z = retained(x, r);
    const std::vector<double> zexp{0.0, 1.0, 2.0, 2.0, 4.0};
    for (std::size_t s = 0; s < 5; ++s) CHECK(z.values[s] == zexp[s]);

    // Full coverage: retained = min(S, c).
    const auto all = var_contract(x, {0.1}, 2.0, 0.0, std::vector<double>(5, 1.0));
    const auto zall = retained(x, all);
    for (std::size_t s = 0; s < 5; ++s)
        CHECK(zall.values[s] == std::min(x.data(s, 0), 2.0));

    // No coverage: zero payout.
    const auto none = var_contract(x, {0.1}, 2.0, 0.0, std::vector<double>(5, 0.0));
    for (std::size_t s = 0; s < 5; ++s) CHECK(none.payout(s, 0) == 0.0);

    // Fractional coverage away from the q atom is rejected: sample 4's cost
    // is 0.2, not q = 0.1.
    CHECK_THROWS_AS(var_contract(x, {0.1}, 2.0, 0.1, {1.0, 1.0, 1.0, 1.0, 0.5}),
                    config_error);
    // On the atom it is accepted (sample 3's cost is exactly 0.1).
    CHECK_NOTHROW(var_contract(x, {0.1}, 2.0, 0.1, {1.0, 1.0, 1.0, 0.5, 0.0}));
}

TEST_CASE("premium") {
    const auto x = testsupport::two_atom();
    const auto zero = variance_contract(x, {0.1}, 0.0, 0.0);
    CHECK(premium(zero, x, {0.1}) == 0.0);
    const auto r = variance_contract(x, {0.1}, 0.25, 0.2);
    CHECK_THAT(premium(r, x, {0.1}), WithinAbs(0.08, 1e-15));

    // Two columns with known means.
    Matrix d(2, 2);
    d(0, 0) = 1.0;
    d(0, 1) = 0.5;
    d(1, 0) = 0.0;
    d(1, 1) = 0.0;
    const auto x2 = SampleMatrix::uniform(std::move(d));
    Contract full{x2.data, VarianceParams{1.0, 0.0}};
    CHECK_THAT(premium(full, x2, {0.1, 0.25}), WithinAbs(0.1 * 0.5 + 0.25 * 0.25, 1e-15));
}

TEST_CASE("retained") {
    const auto x = testsupport::two_atom();
    Contract full{x.data, VarianceParams{1.0, 0.0}};
    const auto z0 = retained(x, full);
    CHECK(z0.values[0] == 0.0);
    CHECK(z0.values[1] == 0.0);

    Contract zero{Matrix(2, 1, 0.0), VarianceParams{0.0, 0.0}};
    const auto zs = retained(x, zero);
    CHECK(zs.values[1] == 2.0);

    Contract bad{Matrix(2, 1, 3.0), VarianceParams{0.0, 0.0}};
    CHECK_THROWS_AS(retained(x, bad), data_error);
}

TEST_CASE("penalized objective") {
    const auto x = testsupport::two_atom();
    const auto r = variance_contract(x, {0.1}, 0.25, 0.2);
    CHECK_THAT(penalized_objective(x, r, {0.1}, 0.25, RiskMeasure::make_variance()),
               WithinAbs(0.09, 1e-12));
    CHECK_THAT(penalized_objective(x, r, {0.1}, 0.0, RiskMeasure::make_variance()),
               WithinAbs(premium(r, x, {0.1}), 1e-15));

    const auto x5 = testsupport::five_atom();
    const auto r5 = cvar_contract(x5, {0.1}, 0.05, 0.8, 2.0);
    CHECK_THAT(penalized_objective(x5, r5, {0.1}, 0.05, RiskMeasure::make_cvar(0.8)),
               WithinAbs(0.16, 1e-12));
}

TEST_CASE("constructor outputs are feasible under random parameters") {
    Gen gen(4004);
    int checked = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        const std::size_t n = gen.index(1, 4);
        const auto x = gen.weighted_matrix(gen.index(1, 20), n);
        const auto beta = gen.loadings(n);
        Matrix payout;
        switch (rep % 3) {
            case 0:
                payout = variance_contract(x, beta, gen.real(0.0, 2.0), gen.real(0.0, 4.0))
                             .payout;
                break;
            case 1:
                payout = cvar_contract(x, beta, gen.real(0.0, 0.2), gen.real(0.1, 0.95),
                                       gen.real(0.0, 5.0),
                                       std::vector<double>(n, gen.real(0.0, 1.0)))
                             .payout;
                break;
            default: {
                std::vector<double> coverage(x.samples());
                for (auto& g : coverage) g = gen.real(0.0, 1.0) < 0.5 ? 0.0 : 1.0;
                payout = var_contract(x, beta, gen.real(0.0, 5.0), 0.0, coverage).payout;
                break;
            }
        }
        for (std::size_t s = 0; s < x.samples(); ++s) {
            for (std::size_t i = 0; i < n; ++i) {
                REQUIRE(payout(s, i) >= -1e-12);
                REQUIRE(payout(s, i) <= x.data(s, i) + 1e-12);
                ++checked;
            }
        }
    }
    CHECK(checked > 0);
}

TEST_CASE("priority ordering: cheaper risks cede before dearer ones") {
    Gen gen(4005);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t n = gen.index(2, 4);
        const auto x = gen.matrix(gen.index(1, 25), n);
        auto beta = gen.loadings(n);  // continuous draws: ties have measure zero
        const double lambda = gen.real(0.05, 1.0);
        const auto r = rep % 2 == 0
                           ? variance_contract(x, beta, lambda, gen.real(0.0, 2.0))
                           : cvar_contract(x, beta, lambda, 0.8, gen.real(0.0, 3.0));
        for (std::size_t s = 0; s < x.samples(); ++s) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    if (beta[i] >= beta[j]) continue;
                    const bool i_partial = r.payout(s, i) < x.data(s, i) - 1e-9;
                    const bool j_active = r.payout(s, j) > 1e-9;
                    REQUIRE_FALSE((i_partial && j_active));
                }
            }
        }
    }
}

TEST_CASE("variance contract is monotone in sigma and loadings") {
    Gen gen(4006);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = gen.index(1, 3);
        const auto x = gen.matrix(gen.index(1, 20), n);
        const auto beta = gen.loadings(n);
        const double lambda = gen.real(0.05, 1.0);
        const double s1 = gen.real(0.0, 2.0);
        const double s2 = s1 + gen.real(0.0, 2.0);
        const auto r1 = variance_contract(x, beta, lambda, s1);
        const auto r2 = variance_contract(x, beta, lambda, s2);
        auto beta_up = beta;
        beta_up[gen.index(0, n - 1)] += gen.real(0.0, 0.2);
        const auto r3 = variance_contract(x, beta_up, lambda, s1);
        for (std::size_t s = 0; s < x.samples(); ++s) {
            double t1 = 0.0;
            double t2 = 0.0;
            double t3 = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                t1 += r1.payout(s, i);
                t2 += r2.payout(s, i);
                t3 += r3.payout(s, i);
            }
            REQUIRE(t2 <= t1 + 1e-9);
            REQUIRE(t3 <= t1 + 1e-9);
        }
    }
}

TEST_CASE("cvar contract is monotone in q") {
    Gen gen(4007);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = gen.index(1, 3);
        const auto x = gen.matrix(gen.index(1, 20), n);
        const auto beta = gen.loadings(n);
        const double lambda = gen.real(0.0, 0.3);
        const double q1 = gen.real(0.0, 3.0);
        const double q2 = q1 + gen.real(0.0, 3.0);
        const auto r1 = cvar_contract(x, beta, lambda, 0.85, q1);
        const auto r2 = cvar_contract(x, beta, lambda, 0.85, q2);
        for (std::size_t s = 0; s < x.samples(); ++s) {
            for (std::size_t i = 0; i < n; ++i) {
                REQUIRE(r2.payout(s, i) <= r1.payout(s, i) + 1e-12);
            }
        }
    }
}

TEST_CASE("tied loadings split proportionally and keep block sums") {
    Matrix d(3, 2);
    d(0, 0) = 1.0;
    d(0, 1) = 3.0;
    d(1, 0) = 2.0;
    d(1, 1) = 2.0;
    d(2, 0) = 0.0;
    d(2, 1) = 5.0;
    const auto x = SampleMatrix::uniform(std::move(d));
    const std::vector<double> tied{0.2, 0.2};
    const auto r = variance_contract(x, tied, 0.5, 0.5);

    // Against the merged single-risk solve: R_blk = (S - c)_+ ^ (X1 + X2).
    const double c = 0.2 / (2.0 * 0.5) + 0.5;
    for (std::size_t s = 0; s < 3; ++s) {
        const double xsum = x.data(s, 0) + x.data(s, 1);
        const double blk = std::min(pos_part(xsum - c), xsum);
        const double got = r.payout(s, 0) + r.payout(s, 1);
        REQUIRE_THAT(got, WithinAbs(blk, 1e-12));
        if (xsum > 0.0) {
            REQUIRE_THAT(r.payout(s, 0), WithinAbs(blk * x.data(s, 0) / xsum, 1e-12));
        }
    }
}

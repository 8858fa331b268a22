#include <doctest.h>

#include <boost/math/distributions/beta.hpp>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "nkscreen/contingency.hpp"
#include "nkscreen/coverage.hpp"
#include "nkscreen/errors.hpp"
#include "nkscreen/powerflow.hpp"
#include "nkscreen/rng.hpp"
#include "test_support.hpp"

using namespace nkscreen;
using nkscreen::testing::ieee;

namespace {

// Clopper-Pearson lower limit as a beta quantile.
double beta_oracle(long x, long n, double confidence) {
    if (x == 0) return 0.0;
    boost::math::beta_distribution<double> dist(static_cast<double>(x), static_cast<double>(n - x + 1));
    return boost::math::quantile(dist, 1.0 - confidence);
}

// Upper tail by summing pmf terms built multiplicatively.
double tail_oracle(long x, long n, double p) {
    double term = std::pow(1.0 - p, static_cast<double>(n));
    double tail = x == 0 ? term : 0.0;
    for (long k = 1; k <= n; ++k) {
        term *= static_cast<double>(n - k + 1) / static_cast<double>(k) * p / (1.0 - p);
        if (k >= x) tail += term;
    }
    return tail;
}

}  // namespace

TEST_CASE("binomial lower bound") {
    CHECK(binomial_lower_bound(0, 30, 0.95) == 0.0);
    CHECK(binomial_lower_bound(20, 20, 0.95) == doctest::Approx(std::pow(0.05, 1.0 / 20)).epsilon(1e-14));
    CHECK(binomial_lower_bound(50, 100, 0.95) == doctest::Approx(beta_oracle(50, 100, 0.95)).epsilon(1e-6));

    for (long n : {1L, 7L, 40L, 300L, 5000L, 20000L})
        for (double frac : {0.01, 0.2, 0.5, 0.93}) {
            const long x = std::max(1L, static_cast<long>(frac * n));
            if (x >= n) continue;
            for (double conf : {0.9, 0.95, 0.99}) {
                CAPTURE(n);
                CAPTURE(x);
                const double lo = binomial_lower_bound(x, n, conf);
                CHECK(std::abs(lo - beta_oracle(x, n, conf)) < 1e-6);
                CHECK(lo <= static_cast<double>(x) / n);
            }
        }

    // the tail at the bound equals 1 - confidence
    const double lo = binomial_lower_bound(13, 60, 0.95);
    CHECK(tail_oracle(13, 60, lo) == doctest::Approx(0.05).epsilon(1e-8));
    CHECK(binomial_upper_tail(13, 60, 0.3) == doctest::Approx(tail_oracle(13, 60, 0.3)).epsilon(1e-12));

    const auto e = estimate_capture(12, 80, 0.95);
    CHECK(e.p_hat == doctest::Approx(0.15));
    CHECK(e.p_lower >= 0.0);
    CHECK(e.p_lower <= e.p_hat);

    CHECK_THROWS_AS(binomial_lower_bound(5, 4, 0.95), ValidationError);
    CHECK_THROWS_AS(binomial_lower_bound(1, 4, 1.0), ValidationError);
}

TEST_CASE("budget sizing and miss probability") {
    CHECK(required_budget(0.3, 1.0) == 0);
    CHECK(required_budget(0.5, 0.01) == static_cast<long>(std::ceil(std::log(0.01) / std::log(0.5))));
    CHECK(required_budget(0.5, 0.01) == 7);
    CHECK_THROWS_AS(required_budget(0.0, 0.01), UnboundedBudgetError);
    CHECK_THROWS_AS(required_budget(0.2, 0.0), ValidationError);

    for (double p : {0.01, 0.05, 0.1, 0.25, 0.5, 0.9})
        for (double d : {0.5, 0.1, 0.01, 0.001}) {
            const long b = required_budget(p, d);
            CHECK(b > 0);
            CHECK(std::pow(1.0 - p, b) <= d);
            CHECK(std::pow(1.0 - p, b - 1) > d);
        }

    // monotone in both arguments
    long prev = std::numeric_limits<long>::max();
    for (double p = 0.02; p < 0.99; p += 0.02) {
        const long b = required_budget(p, 0.01);
        CHECK(b <= prev);
        prev = b;
    }
    prev = 0;
    for (double d = 0.9; d > 1e-6; d *= 0.5) {
        const long b = required_budget(0.1, d);
        CHECK(b >= prev);
        prev = b;
    }

    CHECK(miss_probability(0.0, 17) == 1.0);
    CHECK(miss_probability(0.4, 0) == 1.0);
    double product = 1.0;
    for (int i = 0; i < 10; ++i) product *= 0.7;
    CHECK(miss_probability(0.3, 10) == doctest::Approx(product).epsilon(1e-14));
}

TEST_CASE("simulated miss rate respects the budget") {
    const long trials = 100000;
    for (double p_lower : {0.05, 0.2, 0.5})
        for (double d : {0.1, 0.01}) {
            const long b = required_budget(p_lower, d);
            const double sigma = std::sqrt(d * (1.0 - d) / trials);
            for (double p : {p_lower, std::min(1.0, p_lower * 1.3)}) {
                const double rate = simulate_miss_rate(p, b, trials, 99);
                CHECK(rate <= d + 3.0 * sigma);
            }
        }
    // at p_lower itself the rate tracks (1 - p)^B
    const double rate = simulate_miss_rate(0.2, 5, trials, 4);
    CHECK(std::abs(rate - std::pow(0.8, 5)) < 4.0 * std::sqrt(0.33 * 0.67 / trials));
}

TEST_CASE("coverage metric") {
    const auto a = ContingencyVector::from_indices(4, {0, 1}), b = ContingencyVector::from_indices(4, {0, 2});
    const auto c = ContingencyVector::from_indices(4, {1, 2}), d = ContingencyVector::from_indices(4, {2, 3});
    CHECK(coverage_metric({a, b, c, d}, {a, c}) == 1.0);
    CHECK(coverage_metric({b, d}, {a, c}) == 0.0);
    CHECK(coverage_metric({a, a, b}, {a, c}) == 0.5);
    CHECK_THROWS_AS(coverage_metric({a}, {}), ValidationError);

    // IEEE-14, k = 2: exhaustive labels against 40 uniform picks, counted by hand
    const auto& net = ieee(14);
    const PreparedNetwork prepared(net, nominal_state(net));
    const SeverityConfig cfg;
    const auto base = solve_acpf(prepared, ContingencyVector(net.branch_count()));
    const FeasibleSetSpec spec(net, 2);
    const auto all = enumerate_feasible(spec);
    std::vector<double> severities;
    for (const auto& cv : all) severities.push_back(severity(base, solve_acpf(prepared, cv), cfg));
    // about an eighth of the pairs diverge, so no sample value meets the 10% level
    CHECK(quantile_threshold(severities, 0.1) == std::numeric_limits<double>::infinity());
    const double tau = quantile_threshold(severities, 0.2);
    std::vector<ContingencyVector> severe;
    for (std::size_t i = 0; i < all.size(); ++i)
        if (severities[i] >= tau) severe.push_back(all[i]);
    REQUIRE(!severe.empty());

    Rng rng = make_rng(7);
    std::vector<ContingencyVector> screened;
    for (int i = 0; i < 40; ++i) screened.push_back(uniform_sample(spec, rng));
    std::set<ContingencyVector> distinct(screened.begin(), screened.end());
    int hits = 0;
    for (const auto& s : severe)
        for (const auto& t : distinct)
            if (s.outaged() == t.outaged()) ++hits;
    CHECK(coverage_metric(screened, severe) == doctest::Approx(static_cast<double>(hits) / severe.size()));
}

TEST_CASE("quantile threshold") {
    CHECK(quantile_threshold({1, 2, 3, 4}, 0.5) == 3.0);
    CHECK(quantile_threshold({4, 3, 2, 1}, 0.25) == 4.0);
    CHECK(quantile_threshold({1, 2, 3, 4}, 0.2) == std::numeric_limits<double>::infinity());
    CHECK(quantile_threshold({5, 5, 5}, 1.0) == 5.0);
    CHECK(quantile_threshold({5, 5, 5}, 0.6) == std::numeric_limits<double>::infinity());
    CHECK(quantile_threshold({0.1, 1e4, 0.2, 1e4}, 0.5) == 1e4);
    CHECK_THROWS_AS(quantile_threshold({}, 0.1), ValidationError);

    Rng rng = make_rng(11);
    std::vector<double> u(10000);
    for (auto& v : u) v = uniform01(rng);
    CHECK(std::abs(quantile_threshold(u, 0.1) - 0.9) < 0.02);
}

TEST_CASE("coverage bound") {
    CHECK(coverage_bound({0.1, 0.0, 0, 0.5}) == 0.0);
    CHECK_THROWS_AS(coverage_bound({0.1, 0.02, 100, 0.5}), VacuousBoundError);
    CHECK(coverage_bound({0.2, 0.0, 200, 0.5}) == doctest::Approx(1.0 - std::exp(-5.0)).epsilon(1e-14));
    CHECK_THROWS_AS(coverage_bound({1.2, 0.0, 10, 0.5}), ValidationError);
    CHECK_THROWS_AS(coverage_bound({0.2, 0.0, 10, 1.0}), ValidationError);

    double prev = -1.0;
    for (long m = 0; m <= 400; m += 20) {
        const double b = coverage_bound({0.2, 0.005, m, 0.5});
        CHECK(b >= prev);
        prev = b;
    }
    prev = -1.0;
    for (double delta = 0.06; delta < 0.9; delta += 0.04) {
        const double b = coverage_bound({delta, 0.005, 100, 0.5});
        CHECK(b > prev);
        prev = b;
    }
}

TEST_CASE("mass-shift construction") {
    const auto c = mass_shift_construction(0.2, 0.005);
    double direct = 0.0, tail = 0.0, total = 0.0;
    for (std::size_t i = 0; i < c.p_star.size(); ++i) {
        direct += c.p_theta[i] * std::log(c.p_theta[i] / c.p_star[i]);
        total += c.p_theta[i];
        if (c.in_tail[i]) tail += c.p_theta[i];
    }
    CHECK(std::abs(direct - 0.005) < 1e-9);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(tail == doctest::Approx(c.tail_mass_theta));
    // Pinsker
    CHECK(tail >= 0.2 - std::sqrt(0.005 / 2));

    const auto same = mass_shift_construction(0.3, 0.0);
    CHECK(same.p_theta == same.p_star);
    CHECK(same.kl == 0.0);
    CHECK_THROWS_AS(mass_shift_construction(0.1, 0.5), ValidationError);
}

TEST_CASE("coverage bound Monte Carlo") {
    const auto v = validate_coverage_bound_mc(0.3, 0.0, 100, 0.5, 10000, 21);
    CHECK(v.empirical_rate >= v.bound);
    CHECK(v.bound == doctest::Approx(coverage_bound({0.3, 0.0, 100, 0.5})));

    for (double eps : {0.0, 0.005, 0.02})
        for (double delta : {0.15, 0.3})
            for (long m : {20L, 100L}) {
                const auto r = validate_coverage_bound_mc(delta, eps, m, 0.5, 2000, 5);
                CHECK(r.empirical_rate >= r.bound);
            }

    // single draw: the event is a tail hit
    const auto one = validate_coverage_bound_mc(0.3, 0.005, 1, 1.0 - 1e-9, 20000, 3);
    const double q_theta = one.tail_mass_theta;
    CHECK(std::abs(one.empirical_rate - q_theta) < 4.0 * std::sqrt(q_theta * (1 - q_theta) / 20000));
    CHECK(q_theta >= 0.3 - std::sqrt(0.005 / 2));

    std::ostringstream csv;
    validate_coverage_bound_mc(0.3, 0.0, 10, 0.5, 5, 1, &csv);
    const std::string text = csv.str();
    CHECK(text.rfind("trial,outcome\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 6);

    CHECK_THROWS_AS(validate_coverage_bound_mc(0.1, 0.02, 10, 0.5, 5, 1), VacuousBoundError);
}

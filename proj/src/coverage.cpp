#include "nkscreen/coverage.hpp"

#include <algorithm>
#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <string>

#include "nkscreen/errors.hpp"
#include "nkscreen/rng.hpp"

namespace nkscreen {

namespace {

constexpr long kExactSummationLimit = 10000;

double log_binomial_pmf(long k, long n, double p) {
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) + k * std::log(p) +
           (n - k) * std::log1p(-p);
}

}  // namespace

double binomial_upper_tail(long successes, long trials, double p) {
    if (successes <= 0) return 1.0;
    if (successes > trials) return 0.0;
    if (p <= 0.0) return 0.0;
    if (p >= 1.0) return 1.0;
    if (trials > kExactSummationLimit) return boost::math::ibeta(static_cast<double>(successes), trials - successes + 1.0, p);
    // smallest terms first
    double tail = 0.0;
    for (long k = trials; k >= successes; --k) tail += std::exp(log_binomial_pmf(k, trials, p));
    return std::min(tail, 1.0);
}

double binomial_lower_bound(long successes, long trials, double confidence) {
    if (trials < 1 || successes < 0 || successes > trials) throw ValidationError("need 0 <= successes <= trials, trials >= 1");
    if (!(confidence > 0.0 && confidence < 1.0)) throw ValidationError("confidence must lie in (0, 1)");
    if (successes == 0) return 0.0;
    const double alpha = 1.0 - confidence;
    if (successes == trials) return std::pow(alpha, 1.0 / static_cast<double>(trials));
    // the tail is increasing in p
    double lo = 0.0, hi = static_cast<double>(successes) / static_cast<double>(trials);
    for (int it = 0; it < 200 && hi - lo > 1e-16; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (binomial_upper_tail(successes, trials, mid) < alpha)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

CaptureEstimate estimate_capture(long successes, long trials, double confidence) {
    CaptureEstimate e;
    e.successes = successes;
    e.trials = trials;
    e.confidence = confidence;
    e.p_lower = binomial_lower_bound(successes, trials, confidence);
    e.p_hat = static_cast<double>(successes) / static_cast<double>(trials);
    return e;
}

long required_budget(double p_lower, double delta_miss) {
    if (!(p_lower >= 0.0 && p_lower <= 1.0)) throw ValidationError("capture probability must lie in [0, 1]");
    if (!(delta_miss > 0.0 && delta_miss <= 1.0)) throw ValidationError("miss tolerance must lie in (0, 1]");
    if (delta_miss == 1.0) return 0;
    if (p_lower == 0.0) throw UnboundedBudgetError("capture lower bound is zero: no finite budget meets the miss tolerance");
    if (p_lower == 1.0) return 1;
    auto budget = static_cast<long>(std::ceil(std::log(delta_miss) / std::log1p(-p_lower)));
    budget = std::max(budget, 0L);
    // guard against rounding in the ratio
    while (budget > 0 && miss_probability(p_lower, budget - 1) <= delta_miss) --budget;
    while (miss_probability(p_lower, budget) > delta_miss) ++budget;
    return budget;
}

double miss_probability(double p, long budget) {
    if (!(p >= 0.0 && p <= 1.0) || budget < 0) throw ValidationError("miss probability needs p in [0, 1] and budget >= 0");
    return std::pow(1.0 - p, static_cast<double>(budget));
}

double simulate_miss_rate(double p, long budget, long trials, std::uint64_t seed) {
    if (trials < 1) throw ValidationError("need at least one trial");
    Rng rng = make_rng(seed);
    long misses = 0;
    for (long t = 0; t < trials; ++t) {
        bool hit = false;
        for (long b = 0; b < budget && !hit; ++b) hit = uniform01(rng) < p;
        misses += hit ? 0 : 1;
    }
    return static_cast<double>(misses) / static_cast<double>(trials);
}

double coverage_metric(const std::vector<ContingencyVector>& screened, const std::vector<ContingencyVector>& severe) {
    const std::set<ContingencyVector> target(severe.begin(), severe.end());
    if (target.empty()) throw ValidationError("coverage is undefined for an empty severe set");
    const std::set<ContingencyVector> found(screened.begin(), screened.end());
    std::size_t hit = 0;
    for (const auto& c : target) hit += found.count(c);
    return static_cast<double>(hit) / static_cast<double>(target.size());
}

double quantile_threshold(std::vector<double> severities, double delta) {
    if (severities.empty()) throw ValidationError("quantile of an empty sample");
    if (!(delta > 0.0 && delta <= 1.0)) throw ValidationError("quantile level delta must lie in (0, 1]");
    std::sort(severities.begin(), severities.end());
    const auto n = static_cast<double>(severities.size());
    // fraction{s >= v} only decreases with v, so the first qualifying value is the infimum
    for (std::size_t i = 0; i < severities.size(); ++i) {
        if (i > 0 && severities[i] == severities[i - 1]) continue;
        if (static_cast<double>(severities.size() - i) / n <= delta) return severities[i];
    }
    return std::numeric_limits<double>::infinity();
}

double CoverageBoundParams::tail_floor() const { return delta - std::sqrt(epsilon / 2.0); }

void CoverageBoundParams::validate() const {
    if (!(delta > 0.0 && delta < 1.0)) throw ValidationError("tail mass delta must lie in (0, 1)");
    if (!(epsilon >= 0.0)) throw ValidationError("KL bound epsilon must be non-negative");
    if (m < 0) throw ValidationError("sample count must be non-negative");
    if (!(eta > 0.0 && eta < 1.0)) throw ValidationError("recall slack eta must lie in (0, 1)");
}

double coverage_bound(const CoverageBoundParams& params) {
    params.validate();
    const double q = params.tail_floor();
    if (!(q > 0.0)) throw VacuousBoundError("delta - sqrt(epsilon/2) is not positive; the bound is vacuous");
    return 1.0 - std::exp(-params.eta * params.eta * static_cast<double>(params.m) * q / 2.0);
}

MassShiftConstruction mass_shift_construction(double delta, double epsilon, int tail_atoms, int body_atoms) {
    if (!(delta > 0.0 && delta < 1.0) || !(epsilon >= 0.0) || tail_atoms < 1 || body_atoms < 1)
        throw ValidationError("invalid mass-shift construction parameters");
    // KL of the shifted pair reduces to the binary KL between tail masses
    auto kl_of = [&](double shift) {
        const double a = delta - shift, b = 1.0 - delta + shift;
        return (a > 0.0 ? a * std::log(a / delta) : 0.0) + b * std::log(b / (1.0 - delta));
    };
    const double max_kl = -std::log(1.0 - delta);
    if (epsilon >= max_kl)
        throw ValidationError("target KL " + std::to_string(epsilon) + " is unreachable by shifting tail mass");
    double lo = 0.0, hi = delta;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (kl_of(mid) < epsilon ? lo : hi) = mid;
    }
    const double shift = epsilon == 0.0 ? 0.0 : 0.5 * (lo + hi);

    MassShiftConstruction c;
    const double tail_theta = delta - shift, body_theta = 1.0 - tail_theta;
    for (int i = 0; i < tail_atoms; ++i) {
        c.p_star.push_back(delta / tail_atoms);
        c.p_theta.push_back(tail_theta / tail_atoms);
        c.in_tail.push_back(1);
    }
    for (int i = 0; i < body_atoms; ++i) {
        c.p_star.push_back((1.0 - delta) / body_atoms);
        c.p_theta.push_back(body_theta / body_atoms);
        c.in_tail.push_back(0);
    }
    for (std::size_t i = 0; i < c.p_star.size(); ++i)
        if (c.p_theta[i] > 0.0) c.kl += c.p_theta[i] * std::log(c.p_theta[i] / c.p_star[i]);
    c.tail_mass_theta = tail_theta;
    return c;
}

CoverageBoundValidation validate_coverage_bound_mc(double delta, double epsilon, long m, double eta, long trials,
                                                   std::uint64_t seed, std::ostream* csv) {
    const CoverageBoundParams params{delta, epsilon, m, eta};
    CoverageBoundValidation v;
    v.bound = coverage_bound(params);
    const auto construction = mass_shift_construction(delta, epsilon);
    v.kl = construction.kl;
    v.tail_mass_theta = construction.tail_mass_theta;
    v.trials = trials;

    std::vector<double> cdf(construction.p_theta.size());
    std::partial_sum(construction.p_theta.begin(), construction.p_theta.end(), cdf.begin());
    const double threshold = (1.0 - eta) * static_cast<double>(m) * params.tail_floor();
    if (csv) *csv << "trial,outcome\n";
    long successes = 0;
    for (long t = 0; t < trials; ++t) {
        Rng rng = make_rng(seed, {static_cast<std::uint64_t>(t)});
        long tail_hits = 0;
        for (long i = 0; i < m; ++i) {
            const double u = uniform01(rng) * cdf.back();
            const auto atom = std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin();
            tail_hits += construction.in_tail[std::min<std::size_t>(atom, cdf.size() - 1)];
        }
        const bool ok = static_cast<double>(tail_hits) >= threshold;
        successes += ok ? 1 : 0;
        if (csv) *csv << t << ',' << (ok ? 1 : 0) << '\n';
    }
    v.empirical_rate = static_cast<double>(successes) / static_cast<double>(trials);
    return v;
}

}  // namespace nkscreen

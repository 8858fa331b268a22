#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "nkscreen/contingency_vector.hpp"

namespace nkscreen {

struct CaptureEstimate {
    long successes = 0;
    long trials = 0;
    double p_hat = 0.0;
    double p_lower = 0.0;
    double confidence = 0.95;
};

/// One-sided Clopper-Pearson lower bound: the p at which P(X >= successes) = 1 - confidence
/// for X ~ Binomial(trials, p). Zero when successes == 0.
double binomial_lower_bound(long successes, long trials, double confidence);
/// P(X >= successes) for X ~ Binomial(trials, p).
double binomial_upper_tail(long successes, long trials, double p);

CaptureEstimate estimate_capture(long successes, long trials, double confidence);

/// Smallest B with (1 - p_lower)^B <= delta_miss. Throws UnboundedBudgetError when p_lower == 0.
long required_budget(double p_lower, double delta_miss);
double miss_probability(double p, long budget);

/// Fraction of trials in which `budget` Bernoulli(p) draws contain no success.
double simulate_miss_rate(double p, long budget, long trials, std::uint64_t seed);

/// |screened ∩ severe| / |severe|. Throws ValidationError when severe is empty.
double coverage_metric(const std::vector<ContingencyVector>& screened, const std::vector<ContingencyVector>& severe);

/// Smallest sample value v with fraction{s >= v} <= delta; +infinity if none qualifies.
double quantile_threshold(std::vector<double> severities, double delta);

struct CoverageBoundParams {
    double delta = 0.1;
    double epsilon = 0.0;
    long m = 100;
    double eta = 0.5;

    /// delta - sqrt(epsilon / 2).
    double tail_floor() const;
    void validate() const;
};

/// 1 - exp(-eta^2 m (delta - sqrt(epsilon/2)) / 2). Throws VacuousBoundError when the floor is not positive.
double coverage_bound(const CoverageBoundParams& params);

/// Finite-support pair (p_star, p_theta): tail atoms carry delta under p_star;
/// p_theta moves mass from the tail to the body until KL(p_theta || p_star) = epsilon.
struct MassShiftConstruction {
    std::vector<double> p_star;
    std::vector<double> p_theta;
    std::vector<char> in_tail;
    double kl = 0.0;
    double tail_mass_theta = 0.0;
};

/// Throws ValidationError when epsilon exceeds what any tail-to-body shift can reach.
MassShiftConstruction mass_shift_construction(double delta, double epsilon, int tail_atoms = 5, int body_atoms = 5);

struct CoverageBoundValidation {
    double empirical_rate = 0.0;
    double bound = 0.0;
    double kl = 0.0;
    double tail_mass_theta = 0.0;
    long trials = 0;
};

/// Draws m points from p_theta per trial and records whether the tail count
/// reaches (1 - eta) m (delta - sqrt(epsilon/2)). Writes "trial,outcome" rows to csv when given.
CoverageBoundValidation validate_coverage_bound_mc(double delta, double epsilon, long m, double eta, long trials,
                                                   std::uint64_t seed, std::ostream* csv = nullptr);

}  // namespace nkscreen

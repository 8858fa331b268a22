#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nkscreen/io.hpp"
#include "nkscreen/pipeline.hpp"

namespace nkscreen {

/// Every setting of a run. Each field has a default; a JSON config overrides
/// any subset, and unknown keys are rejected so typos surface early.
struct RunConfig {
    std::string case_path;
    std::uint64_t seed = 1;
    std::string out_dir = "run";
    int parallelism = 0;  ///< 0 means all available cores

    // operating states
    int train_states = 60;
    int test_states = 20;
    StateSampling sampling{{0.8, 1.2}, {0.8, 1.2}};

    // severity labels
    double tau = 0.0;              ///< 0 picks the tau_quantile level of convergent single-outage severities
    double tau_quantile = 0.1;     ///< upper-tail fraction; 0.1 is the 90th percentile
    double s_fail = 10000.0;
    bool islanding_as_fail = true;

    SolverOptions solver;
    KRange k_range{2, 2};

    // offline models
    EvgnnHyper surrogate{3, 32, 80};
    bool surrogate_refit = true;  ///< retrain on the N-1 and labeled high-risk records together
    int high_risk_pool = 300;
    int high_risk_retain = 40;
    ScheduleParams schedule;
    DenoiserHyper denoiser{64, 32, 128, 2, 100};
    double weight_gamma = 4.0;
    GuidanceConfig guidance{2.0};

    // online screening
    std::string method = "diffusion";
    int budget = 0;  ///< 0 sizes the budget from the capture bound
    bool dedup = true;
    double delta_miss = 0.01;
    double confidence = 0.95;
    int calibration_states = 10;
    int calibration_samples = 20;
    long enumeration_cap = 200000;
    int score_pool = 2000;

    // evaluation and benchmark
    int m_max = 20;
    std::vector<int> bench_k{1, 2, 3, 4};
    int bench_m = 20;
    long bench_cap = 20000;

    void validate() const;
    int threads() const;
    SeverityConfig severity(double resolved_tau) const;
    ScreenOptions screen_options() const;
};

Json to_json(const RunConfig& c);
/// Defaults overridden by the keys present in j.
RunConfig config_from_json(const Json& j);
/// A relative "case" path is resolved against the config file's directory.
RunConfig load_config(const std::string& path);

/// FNV-1a of the canonical JSON dump of the config, without the case path,
/// output directory and thread count.
std::string config_hash(const RunConfig& c);

}  // namespace nkscreen

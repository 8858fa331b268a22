#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nkscreen/contingency.hpp"
#include "nkscreen/coverage.hpp"
#include "nkscreen/diffusion.hpp"
#include "nkscreen/grid_model.hpp"
#include "nkscreen/powerflow.hpp"
#include "nkscreen/surrogate.hpp"

namespace nkscreen {

/// One labeled (state, contingency) pair.
struct SeverityRecord {
    std::string state_id;
    int sample_index = 0;  ///< generation order within the run
    ContingencyVector c;
    double s = 0.0;
    bool converged = false;
    bool islanded = false;
    bool in_band = false;
    int iterations = 0;

    friend bool operator==(const SeverityRecord&, const SeverityRecord&) = default;
};

/// A state compiled for repeated contingency solves, with its converged base case.
struct StateContext {
    OperatingState state;
    PreparedNetwork prepared;
    PowerFlowSolution base;

    /// Throws InfeasibleError when the base case does not converge.
    StateContext(const NetworkCase& net, OperatingState state, const SolverOptions& solver = {});
};

/// ACPF-label one pattern. Islanding patterns get s_fail without a solve.
SeverityRecord label_contingency(const StateContext& ctx, const ContingencyVector& c, const SeverityConfig& cfg,
                                 const SolverOptions& solver = {});

struct StateSampling {
    Interval load{0.9, 1.1};
    Interval gen{0.9, 1.1};
};

/// n perturbed states; state i draws from derive_seed(seed, {i}) and is named prefix + "0000", prefix + "0001", ...
std::vector<OperatingState> sample_states(const NetworkCase& net, int n, std::uint64_t seed,
                                          const StateSampling& sampling, const SolverOptions& solver = {},
                                          const std::string& prefix = "s");

struct DatasetN1 {
    std::vector<OperatingState> states;
    std::vector<SeverityRecord> records;  ///< per state: base first, then branch 0..N-1
};

/// Base case plus every single outage for each state. With islanding_as_fail
/// the islanding singletons are kept and labeled s_fail; otherwise they are dropped.
DatasetN1 build_n1_dataset(const NetworkCase& net, const std::vector<OperatingState>& states,
                           const SeverityConfig& cfg, const SolverOptions& solver = {}, int parallelism = 1,
                           bool islanding_as_fail = true);

/// Records joined with their state features, for the surrogate.
std::vector<LabeledExample> surrogate_examples(const std::vector<OperatingState>& states,
                                               const std::vector<SeverityRecord>& records);
/// Records joined with their state features, for the generator.
std::vector<DiffusionExample> diffusion_examples(const std::vector<OperatingState>& states,
                                                 const std::vector<SeverityRecord>& records);

/// Surrogate-ranked high-risk patterns per state, each ACPF-labeled.
std::vector<SeverityRecord> build_nk_training_set(const EvgnnModel& surrogate, const std::vector<StateContext>& states,
                                                  const FeasibleSetSpec& spec, KRange range, int pool, int retain,
                                                  std::uint64_t seed, const SeverityConfig& cfg,
                                                  const SolverOptions& solver = {}, int parallelism = 1);

// --- screening --------------------------------------------------------------

enum class Method { diffusion, random, evgnn_rank, exhaustive };

const char* method_name(Method m);
/// Accepts "diffusion", "random", "uniform-random", "evgnn-rank", "exhaustive".
Method parse_method(const std::string& name);

/// Trained artifacts; members not needed by a method may be null.
struct Models {
    const EvgnnModel* surrogate = nullptr;
    const DenoiserModel* denoiser = nullptr;
    const NoiseSchedule* schedule = nullptr;
};

struct ScreenOptions {
    Method method = Method::diffusion;
    KRange k_range{2, 2};
    int budget = 20;
    bool dedup = true;
    GuidanceConfig guidance;
    int parallelism = 1;
    /// Enumeration limit for exhaustive runs and for scoring every feasible pattern.
    long enumeration_cap = 200000;
    /// Uniform candidates scored by evgnn-rank when enumeration exceeds the cap.
    int score_pool = 2000;
};

struct ScreeningRun {
    Method method = Method::diffusion;
    std::string state_id;
    long budget = 0;
    std::vector<SeverityRecord> records;  ///< severity-descending
    long solves = 0;
    double generation_seconds = 0.0;
    double validation_seconds = 0.0;
};

/// Candidate patterns for one state, in generation order. The budget does not
/// apply to exhaustive runs; throws ValidationError above the enumeration cap.
std::vector<ContingencyVector> propose_candidates(const StateContext& ctx, const FeasibleSetSpec& spec,
                                                  const Models& models, const ScreenOptions& options,
                                                  std::uint64_t seed);

/// Severity descending, ties by branch list.
void sort_records(std::vector<SeverityRecord>& records);

/// Propose, ACPF-validate every candidate, and sort.
ScreeningRun screen_state(const StateContext& ctx, const FeasibleSetSpec& spec, const Models& models,
                          const ScreenOptions& options, const SeverityConfig& cfg, const SolverOptions& solver,
                          std::uint64_t seed);

/// Online phase: budget from the capture bound, then screen_state.
ScreeningRun screen_online(const StateContext& ctx, const FeasibleSetSpec& spec, const Models& models,
                           const CaptureEstimate& capture, double delta_miss, ScreenOptions options,
                           const SeverityConfig& cfg, const SolverOptions& solver, std::uint64_t seed);

/// Capture probability of s >= cfg.tau for the configured method, from
/// samples_per_state generated candidates on each calibration state.
CaptureEstimate calibrate_capture(const std::vector<StateContext>& states, const FeasibleSetSpec& spec,
                                  const Models& models, ScreenOptions options, int samples_per_state,
                                  double confidence, const SeverityConfig& cfg, const SolverOptions& solver,
                                  std::uint64_t seed);

// --- evaluation -------------------------------------------------------------

struct TopmCurve {
    std::vector<double> mean;  ///< mean[m - 1], averaged over included states
    int states_used = 0;
    int states_excluded = 0;  ///< no convergent record
};

TopmCurve topm_curve(const std::vector<ScreeningRun>& runs, int m_max);

struct Composition {
    long total = 0;
    long in_band = 0;
    long out_of_band = 0;
    long nonconvergent = 0;

    long convergent() const { return in_band + out_of_band; }
    double convergent_fraction() const;
    /// Share of convergent records that are in band; 0 without convergent records.
    double in_band_among_convergent() const;
    double in_band_fraction() const;
    double out_of_band_fraction() const;
    double nonconvergent_fraction() const;
};

Composition outcome_composition(const std::vector<ScreeningRun>& runs);
Composition composition_of(const std::vector<SeverityRecord>& records);
/// Record-weighted pooling.
Composition merge(const std::vector<Composition>& parts);

struct BenchRow {
    int k = 0;
    Method method = Method::exhaustive;
    double seconds = 0.0;
    long candidates = 0;
    long solves = 0;
    bool skipped = false;
    std::string note;
};

/// Exhaustive, surrogate-ranked (score all, validate top m) and generative
/// (generate m, validate m) screening at each k. Exhaustive and score-all rows
/// above options.enumeration_cap are skipped with a note.
std::vector<BenchRow> runtime_benchmark(const StateContext& ctx, const FeasibleSetSpec& spec, const Models& models,
                                        const std::vector<int>& k_list, int m, const ScreenOptions& options,
                                        const SeverityConfig& cfg, const SolverOptions& solver, std::uint64_t seed);

}  // namespace nkscreen

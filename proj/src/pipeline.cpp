#include "nkscreen/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numeric>
#include <limits>
#include <set>

#include "nkscreen/errors.hpp"
#include "nkscreen/parallel.hpp"
#include "nkscreen/rng.hpp"

namespace nkscreen {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::uint64_t total_patterns(const FeasibleSetSpec& spec, KRange range) {
    std::uint64_t total = 0;
    for (int k = range.k_min; k <= range.k_max; ++k) {
        const auto c = binomial(spec.n(), k);
        total = c > UINT64_MAX - total ? UINT64_MAX : total + c;
    }
    return total;
}

void check_range(const FeasibleSetSpec& spec, KRange range) {
    if (range.k_min < 1 || range.k_max < range.k_min || range.k_max > spec.n())
        throw ValidationError("invalid k range [" + std::to_string(range.k_min) + ", " +
                              std::to_string(range.k_max) + "]");
}

std::vector<ContingencyVector> enumerate_range(const FeasibleSetSpec& spec, KRange range) {
    std::vector<ContingencyVector> out;
    for (int k = range.k_min; k <= range.k_max; ++k)
        for_each_feasible(spec.with_k(k), [&](const ContingencyVector& c) {
            out.push_back(c);
            return true;
        });
    return out;
}

std::vector<SeverityRecord> label_all(const StateContext& ctx, const std::vector<ContingencyVector>& cs,
                                      const SeverityConfig& cfg, const SolverOptions& solver, int parallelism) {
    std::vector<SeverityRecord> out(cs.size());
    parallel_for(cs.size(), parallelism, [&](std::size_t i) {
        out[i] = label_contingency(ctx, cs[i], cfg, solver);
        out[i].sample_index = static_cast<int>(i);
    });
    return out;
}

std::vector<ContingencyVector> random_candidates(const FeasibleSetSpec& spec, KRange range, int m, bool dedup,
                                                 std::uint64_t seed) {
    std::vector<ContingencyVector> out;
    std::set<ContingencyVector> seen;
    const long max_draws = dedup ? 10L * m : m;
    for (long i = 0; i < max_draws && static_cast<int>(out.size()) < m; ++i) {
        Rng rng = make_rng(seed, {static_cast<std::uint64_t>(i)});
        auto c = uniform_sample(spec, range, rng);
        if (dedup && !seen.insert(c).second) continue;
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<ContingencyVector> ranked_candidates(const StateContext& ctx, const FeasibleSetSpec& spec,
                                                 const EvgnnModel& surrogate, const ScreenOptions& o,
                                                 std::uint64_t seed) {
    std::vector<ContingencyVector> pool;
    if (total_patterns(spec, o.k_range) <= static_cast<std::uint64_t>(o.enumeration_cap))
        pool = enumerate_range(spec, o.k_range);
    else
        pool = random_candidates(spec, o.k_range, o.score_pool, true, seed);
    std::vector<std::vector<double>> relaxed;
    relaxed.reserve(pool.size());
    for (const auto& c : pool) relaxed.push_back(c.relaxed());
    const auto scores = score_batch(surrogate, ctx.state.feature_vector, relaxed);
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<ContingencyVector> out;
    for (std::size_t i = 0; i < order.size() && static_cast<int>(out.size()) < o.budget; ++i)
        out.push_back(pool[order[i]]);
    return out;
}

}  // namespace

StateContext::StateContext(const NetworkCase& net, OperatingState s, const SolverOptions& solver)
    : state(std::move(s)), prepared(net, state), base(solve_acpf(prepared, ContingencyVector(net.branch_count()), solver)) {
    if (!base.converged) throw InfeasibleError("base case of state " + state.state_id + " does not converge");
}

SeverityRecord label_contingency(const StateContext& ctx, const ContingencyVector& c, const SeverityConfig& cfg,
                                 const SolverOptions& solver) {
    SeverityRecord r;
    r.state_id = ctx.state.state_id;
    r.c = c;
    if (!ctx.prepared.graph().is_connected(c)) {
        r.islanded = true;
        r.s = cfg.s_fail;
    } else {
        const auto post = solve_acpf(ctx.prepared, c, solver);
        r.converged = post.converged;
        r.iterations = post.iterations;
        r.s = severity(ctx.base, post, cfg);
    }
    r.in_band = r.converged && classify(r.s, cfg) == Outcome::convergent_in_band;
    return r;
}

std::vector<OperatingState> sample_states(const NetworkCase& net, int n, std::uint64_t seed,
                                          const StateSampling& sampling, const SolverOptions& solver,
                                          const std::string& prefix) {
    if (n < 1) throw ValidationError("need at least one state");
    std::vector<OperatingState> out;
    for (int i = 0; i < n; ++i) {
        auto s = perturb_state(net, derive_seed(seed, {static_cast<std::uint64_t>(i)}), sampling.load, sampling.gen,
                               solver);
        char id[16];
        std::snprintf(id, sizeof id, "%04d", i);
        s.state_id = prefix + id;
        out.push_back(std::move(s));
    }
    return out;
}

DatasetN1 build_n1_dataset(const NetworkCase& net, const std::vector<OperatingState>& states,
                           const SeverityConfig& cfg, const SolverOptions& solver, int parallelism,
                           bool islanding_as_fail) {
    if (states.empty()) throw ValidationError("need at least one state");
    const int n = net.branch_count();
    std::vector<std::vector<SeverityRecord>> per_state(states.size());
    parallel_for(states.size(), parallelism, [&](std::size_t si) {
        const StateContext ctx(net, states[si], solver);
        auto& out = per_state[si];
        out.push_back(label_contingency(ctx, ContingencyVector(n), cfg, solver));
        for (int e = 0; e < n; ++e) {
            auto r = label_contingency(ctx, ContingencyVector::single(n, e), cfg, solver);
            if (r.islanded && !islanding_as_fail) continue;
            out.push_back(std::move(r));
        }
        for (std::size_t i = 0; i < out.size(); ++i) out[i].sample_index = static_cast<int>(i);
    });
    DatasetN1 d;
    d.states = states;
    for (auto& v : per_state) std::move(v.begin(), v.end(), std::back_inserter(d.records));
    return d;
}

namespace {

const OperatingState& find_state(const std::vector<OperatingState>& states, const std::string& id) {
    for (const auto& s : states)
        if (s.state_id == id) return s;
    throw ValidationError("record refers to unknown state " + id);
}

}  // namespace

std::vector<LabeledExample> surrogate_examples(const std::vector<OperatingState>& states,
                                               const std::vector<SeverityRecord>& records) {
    std::vector<LabeledExample> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back({find_state(states, r.state_id).feature_vector, r.c.relaxed(), r.s});
    return out;
}

std::vector<DiffusionExample> diffusion_examples(const std::vector<OperatingState>& states,
                                                 const std::vector<SeverityRecord>& records) {
    std::vector<DiffusionExample> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back({find_state(states, r.state_id).feature_vector, r.c, r.s});
    return out;
}

std::vector<SeverityRecord> build_nk_training_set(const EvgnnModel& surrogate, const std::vector<StateContext>& states,
                                                  const FeasibleSetSpec& spec, KRange range, int pool, int retain,
                                                  std::uint64_t seed, const SeverityConfig& cfg,
                                                  const SolverOptions& solver, int parallelism) {
    check_range(spec, range);
    std::vector<std::vector<double>> xs;
    for (const auto& s : states) xs.push_back(s.state.feature_vector);
    const auto entries = build_high_risk_set(surrogate, spec, xs, range, pool, retain, seed);
    std::vector<SeverityRecord> out(entries.size());
    parallel_for(entries.size(), parallelism, [&](std::size_t i) {
        out[i] = label_contingency(states[entries[i].state_index], entries[i].c, cfg, solver);
        out[i].sample_index = static_cast<int>(i);
    });
    return out;
}

const char* method_name(Method m) {
    switch (m) {
        case Method::diffusion: return "diffusion";
        case Method::random: return "random";
        case Method::evgnn_rank: return "evgnn-rank";
        case Method::exhaustive: return "exhaustive";
    }
    return "?";
}

Method parse_method(const std::string& name) {
    if (name == "diffusion") return Method::diffusion;
    if (name == "random" || name == "uniform-random") return Method::random;
    if (name == "evgnn-rank") return Method::evgnn_rank;
    if (name == "exhaustive") return Method::exhaustive;
    throw ValidationError("unknown method '" + name + "'");
}

std::vector<ContingencyVector> propose_candidates(const StateContext& ctx, const FeasibleSetSpec& spec,
                                                  const Models& models, const ScreenOptions& o, std::uint64_t seed) {
    check_range(spec, o.k_range);
    if (o.budget < 0) throw ValidationError("budget must be non-negative");
    switch (o.method) {
        case Method::exhaustive:
            if (total_patterns(spec, o.k_range) > static_cast<std::uint64_t>(o.enumeration_cap))
                throw ValidationError("exhaustive enumeration exceeds the cap of " + std::to_string(o.enumeration_cap));
            return enumerate_range(spec, o.k_range);
        case Method::random:
            return random_candidates(spec, o.k_range, o.budget, o.dedup, seed);
        case Method::evgnn_rank:
            if (!models.surrogate) throw ValidationError("evgnn-rank needs a trained surrogate");
            if (o.budget == 0) return {};
            return ranked_candidates(ctx, spec, *models.surrogate, o, seed);
        case Method::diffusion: {
            if (!models.denoiser || !models.schedule) throw ValidationError("diffusion needs a trained generator");
            if (o.budget == 0) return {};
            const EvgnnModel* guide = o.guidance.lambda != 0.0 ? models.surrogate : nullptr;
            if (o.guidance.lambda != 0.0 && !guide) throw ValidationError("guidance needs a trained surrogate");
            GenerateOptions g;
            g.k_range = o.k_range;
            g.dedup = o.dedup;
            g.parallelism = o.parallelism;
            return generate(*models.denoiser, guide, *models.schedule, ctx.state.feature_vector, spec, o.budget,
                            o.guidance, g, seed);
        }
    }
    return {};
}

void sort_records(std::vector<SeverityRecord>& records) {
    std::stable_sort(records.begin(), records.end(), [](const SeverityRecord& a, const SeverityRecord& b) {
        if (a.s != b.s) return a.s > b.s;
        return a.c < b.c;
    });
}

ScreeningRun screen_state(const StateContext& ctx, const FeasibleSetSpec& spec, const Models& models,
                          const ScreenOptions& options, const SeverityConfig& cfg, const SolverOptions& solver,
                          std::uint64_t seed) {
    ScreeningRun run;
    run.method = options.method;
    run.state_id = ctx.state.state_id;
    run.budget = options.budget;
    auto t0 = Clock::now();
    const auto candidates = propose_candidates(ctx, spec, models, options, seed);
    run.generation_seconds = seconds_since(t0);
    t0 = Clock::now();
    run.records = label_all(ctx, candidates, cfg, solver, options.parallelism);
    run.validation_seconds = seconds_since(t0);
    run.solves = static_cast<long>(std::count_if(run.records.begin(), run.records.end(),
                                                 [](const SeverityRecord& r) { return !r.islanded; }));
    sort_records(run.records);
    return run;
}

ScreeningRun screen_online(const StateContext& ctx, const FeasibleSetSpec& spec, const Models& models,
                           const CaptureEstimate& capture, double delta_miss, ScreenOptions options,
                           const SeverityConfig& cfg, const SolverOptions& solver, std::uint64_t seed) {
    const long b = required_budget(capture.p_lower, delta_miss);
    if (b > std::numeric_limits<int>::max()) throw ValidationError("budget too large");
    options.budget = static_cast<int>(b);
    return screen_state(ctx, spec, models, options, cfg, solver, seed);
}

CaptureEstimate calibrate_capture(const std::vector<StateContext>& states, const FeasibleSetSpec& spec,
                                  const Models& models, ScreenOptions options, int samples_per_state,
                                  double confidence, const SeverityConfig& cfg, const SolverOptions& solver,
                                  std::uint64_t seed) {
    if (states.empty() || samples_per_state < 1) throw ValidationError("calibration needs states and samples");
    // every draw counts as an independent trial, so duplicates are kept
    options.budget = samples_per_state;
    options.dedup = false;
    long successes = 0, trials = 0;
    for (std::size_t i = 0; i < states.size(); ++i) {
        const auto run = screen_state(states[i], spec, models, options, cfg, solver,
                                      derive_seed(seed, {static_cast<std::uint64_t>(i)}));
        for (const auto& r : run.records) successes += r.s >= cfg.tau ? 1 : 0;
        trials += static_cast<long>(run.records.size());
    }
    return estimate_capture(successes, trials, confidence);
}

TopmCurve topm_curve(const std::vector<ScreeningRun>& runs, int m_max) {
    if (runs.empty()) throw ValidationError("top-m curve of no runs");
    if (m_max < 1) throw ValidationError("m_max must be positive");
    TopmCurve curve;
    curve.mean.assign(m_max, 0.0);
    for (const auto& run : runs) {
        std::vector<double> s;
        for (const auto& r : run.records)
            if (r.converged) s.push_back(r.s);
        if (s.empty()) {
            ++curve.states_excluded;
            continue;
        }
        ++curve.states_used;
        std::sort(s.rbegin(), s.rend());
        double sum = 0.0;
        for (int m = 1; m <= m_max; ++m) {
            if (m <= static_cast<int>(s.size())) sum += s[m - 1];
            curve.mean[m - 1] += sum / std::min<double>(m, s.size());
        }
    }
    if (curve.states_used > 0)
        for (auto& v : curve.mean) v /= curve.states_used;
    return curve;
}

double Composition::convergent_fraction() const { return total ? double(convergent()) / total : 0.0; }
double Composition::in_band_among_convergent() const { return convergent() ? double(in_band) / convergent() : 0.0; }
double Composition::in_band_fraction() const { return total ? double(in_band) / total : 0.0; }
double Composition::out_of_band_fraction() const { return total ? double(out_of_band) / total : 0.0; }
double Composition::nonconvergent_fraction() const { return total ? double(nonconvergent) / total : 0.0; }

Composition composition_of(const std::vector<SeverityRecord>& records) {
    Composition c;
    for (const auto& r : records) {
        ++c.total;
        if (!r.converged)
            ++c.nonconvergent;
        else if (r.in_band)
            ++c.in_band;
        else
            ++c.out_of_band;
    }
    return c;
}

Composition merge(const std::vector<Composition>& parts) {
    Composition c;
    for (const auto& p : parts) {
        c.total += p.total;
        c.in_band += p.in_band;
        c.out_of_band += p.out_of_band;
        c.nonconvergent += p.nonconvergent;
    }
    return c;
}

Composition outcome_composition(const std::vector<ScreeningRun>& runs) {
    std::vector<Composition> parts;
    for (const auto& r : runs) parts.push_back(composition_of(r.records));
    return merge(parts);
}

std::vector<BenchRow> runtime_benchmark(const StateContext& ctx, const FeasibleSetSpec& spec, const Models& models,
                                        const std::vector<int>& k_list, int m, const ScreenOptions& options,
                                        const SeverityConfig& cfg, const SolverOptions& solver, std::uint64_t seed) {
    std::vector<BenchRow> rows;
    for (int k : k_list) {
        const KRange range{k, k};
        check_range(spec, range);
        const bool enumerable = binomial(spec.n(), k) <= static_cast<std::uint64_t>(options.enumeration_cap);
        const std::string cap_note = "C(" + std::to_string(spec.n()) + "," + std::to_string(k) + ") exceeds cap " +
                                     std::to_string(options.enumeration_cap);
        for (Method method : {Method::exhaustive, Method::evgnn_rank, Method::diffusion}) {
            BenchRow row;
            row.k = k;
            row.method = method;
            if (method == Method::evgnn_rank && !models.surrogate) continue;
            if (method == Method::diffusion && !models.denoiser) continue;
            if (method != Method::diffusion && !enumerable) {
                row.skipped = true;
                row.note = cap_note;
                rows.push_back(row);
                continue;
            }
            ScreenOptions o = options;
            o.method = method;
            o.k_range = range;
            o.budget = m;
            // generate m, validate m: redraws for distinctness would make cost depend on |F_k|
            if (method == Method::diffusion) o.dedup = false;
            const auto t0 = Clock::now();
            const auto run = screen_state(ctx, spec, models, o, cfg, solver,
                                          derive_seed(seed, {static_cast<std::uint64_t>(k)}));
            row.seconds = seconds_since(t0);
            row.candidates = static_cast<long>(run.records.size());
            row.solves = run.solves;
            rows.push_back(row);
        }
    }
    return rows;
}

}  // namespace nkscreen

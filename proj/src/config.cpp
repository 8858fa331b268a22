#include "nkscreen/config.hpp"

#include <algorithm>
#include <filesystem>
#include <initializer_list>

#include "nkscreen/errors.hpp"
#include "nkscreen/parallel.hpp"

namespace nkscreen {

namespace {

void only_keys(const Json& j, const std::string& where, std::initializer_list<const char*> keys) {
    if (!j.is_object()) throw ValidationError("config section '" + where + "' must be an object");
    for (const auto& [k, v] : j.items())
        if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; }))
            throw ValidationError("unknown config key '" + where + (where.empty() ? "" : ".") + k + "'");
}

template <class T>
void read(const Json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

Json pair(double a, double b) { return Json::array({a, b}); }

void read_interval(const Json& j, const char* key, Interval& out) {
    if (!j.contains(key)) return;
    const auto v = j.at(key).get<std::vector<double>>();
    if (v.size() != 2) throw ValidationError(std::string("'") + key + "' needs [lo, hi]");
    out = {v[0], v[1]};
}

}  // namespace

void RunConfig::validate() const {
    if (train_states < 1 || test_states < 1) throw ValidationError("need at least one train and one test state");
    if (!(tau >= 0.0) || !(tau_quantile > 0.0 && tau_quantile <= 1.0)) throw ValidationError("bad tau settings");
    if (k_range.k_min < 1 || k_range.k_max < k_range.k_min) throw ValidationError("bad k_range");
    if (high_risk_pool < 1 || high_risk_retain < 0 || high_risk_retain > high_risk_pool)
        throw ValidationError("high_risk needs 0 <= retain <= pool");
    if (budget < 0) throw ValidationError("budget must be non-negative");
    if (!(delta_miss > 0.0 && delta_miss <= 1.0)) throw ValidationError("delta_miss must lie in (0, 1]");
    if (!(confidence > 0.0 && confidence < 1.0)) throw ValidationError("confidence must lie in (0, 1)");
    if (calibration_states < 1 || calibration_samples < 1) throw ValidationError("calibration needs states and samples");
    if (m_max < 1 || bench_m < 1) throw ValidationError("m_max and bench.m must be positive");
    if (parallelism < 0) throw ValidationError("parallelism must be non-negative");
    parse_method(method);
    surrogate.validate();
    denoiser.validate();
    guidance.validate();
    severity(tau > 0.0 ? tau : 1.0).validate();
}

int RunConfig::threads() const { return parallelism > 0 ? parallelism : default_parallelism(); }

SeverityConfig RunConfig::severity(double resolved_tau) const { return SeverityConfig::with_tau(resolved_tau, s_fail); }

ScreenOptions RunConfig::screen_options() const {
    ScreenOptions o;
    o.method = parse_method(method);
    o.k_range = k_range;
    o.budget = budget;
    o.dedup = dedup;
    o.guidance = guidance;
    o.parallelism = threads();
    o.enumeration_cap = enumeration_cap;
    o.score_pool = score_pool;
    return o;
}

Json to_json(const RunConfig& c) {
    const auto& h = c.surrogate;
    const auto& d = c.denoiser;
    return {
        {"case", c.case_path},
        {"seed", c.seed},
        {"out", c.out_dir},
        {"parallelism", c.parallelism},
        {"states",
         {{"train", c.train_states},
          {"test", c.test_states},
          {"load", pair(c.sampling.load.lo, c.sampling.load.hi)},
          {"gen", pair(c.sampling.gen.lo, c.sampling.gen.hi)}}},
        {"severity",
         {{"tau", c.tau}, {"tau_quantile", c.tau_quantile}, {"s_fail", c.s_fail}, {"islanding_as_fail", c.islanding_as_fail}}},
        {"solver",
         {{"tolerance", c.solver.tolerance},
          {"max_iterations", c.solver.max_iterations},
          {"enforce_q_limits", c.solver.enforce_q_limits},
          {"max_q_rounds", c.solver.max_q_rounds}}},
        {"k_range", Json::array({c.k_range.k_min, c.k_range.k_max})},
        {"surrogate",
         {{"layers", h.layers},
          {"hidden", h.hidden},
          {"epochs", h.epochs},
          {"learning_rate", h.learning_rate},
          {"momentum", h.momentum},
          {"batch_size", h.batch_size},
          {"clip_quantile", h.clip_quantile},
          {"clip_factor", h.clip_factor},
          {"refit", c.surrogate_refit}}},
        {"high_risk", {{"pool", c.high_risk_pool}, {"retain", c.high_risk_retain}}},
        {"schedule",
         {{"T", c.schedule.T},
          {"beta_lo", c.schedule.beta_lo},
          {"beta_hi", c.schedule.beta_hi},
          {"terminal_limit", c.schedule.terminal_limit}}},
        {"denoiser",
         {{"state_hidden", d.state_hidden},
          {"time_dim", d.time_dim},
          {"trunk_hidden", d.trunk_hidden},
          {"trunk_layers", d.trunk_layers},
          {"epochs", d.epochs},
          {"batch_size", d.batch_size},
          {"learning_rate", d.learning_rate},
          {"weight_gamma", c.weight_gamma}}},
        {"guidance",
         {{"lambda", c.guidance.lambda},
          {"start_step", c.guidance.start_step},
          {"clip", c.guidance.clip},
          {"sharpness", c.guidance.sharpness}}},
        {"screen",
         {{"method", c.method},
          {"budget", c.budget},
          {"dedup", c.dedup},
          {"delta_miss", c.delta_miss},
          {"confidence", c.confidence},
          {"calibration_states", c.calibration_states},
          {"calibration_samples", c.calibration_samples},
          {"enumeration_cap", c.enumeration_cap},
          {"score_pool", c.score_pool}}},
        {"evaluate", {{"m_max", c.m_max}}},
        {"bench", {{"k", c.bench_k}, {"m", c.bench_m}, {"cap", c.bench_cap}}},
    };
}

RunConfig config_from_json(const Json& j) {
    RunConfig c;
    try {
        only_keys(j, "", {"case", "seed", "out", "parallelism", "states", "severity", "solver", "k_range", "surrogate",
                          "high_risk", "schedule", "denoiser", "guidance", "screen", "evaluate", "bench"});
        read(j, "case", c.case_path);
        read(j, "seed", c.seed);
        read(j, "out", c.out_dir);
        read(j, "parallelism", c.parallelism);
        if (j.contains("states")) {
            const auto& s = j.at("states");
            only_keys(s, "states", {"train", "test", "load", "gen"});
            read(s, "train", c.train_states);
            read(s, "test", c.test_states);
            read_interval(s, "load", c.sampling.load);
            read_interval(s, "gen", c.sampling.gen);
        }
        if (j.contains("severity")) {
            const auto& s = j.at("severity");
            only_keys(s, "severity", {"tau", "tau_quantile", "s_fail", "islanding_as_fail"});
            read(s, "tau", c.tau);
            read(s, "tau_quantile", c.tau_quantile);
            read(s, "s_fail", c.s_fail);
            read(s, "islanding_as_fail", c.islanding_as_fail);
        }
        if (j.contains("solver")) {
            const auto& s = j.at("solver");
            only_keys(s, "solver", {"tolerance", "max_iterations", "enforce_q_limits", "max_q_rounds"});
            read(s, "tolerance", c.solver.tolerance);
            read(s, "max_iterations", c.solver.max_iterations);
            read(s, "enforce_q_limits", c.solver.enforce_q_limits);
            read(s, "max_q_rounds", c.solver.max_q_rounds);
        }
        if (j.contains("k_range")) {
            const auto k = j.at("k_range").get<std::vector<int>>();
            if (k.size() != 2) throw ValidationError("k_range needs [k_min, k_max]");
            c.k_range = {k[0], k[1]};
        }
        if (j.contains("surrogate")) {
            const auto& s = j.at("surrogate");
            only_keys(s, "surrogate", {"layers", "hidden", "epochs", "learning_rate", "momentum", "batch_size",
                                       "clip_quantile", "clip_factor", "refit"});
            read(s, "layers", c.surrogate.layers);
            read(s, "hidden", c.surrogate.hidden);
            read(s, "epochs", c.surrogate.epochs);
            read(s, "learning_rate", c.surrogate.learning_rate);
            read(s, "momentum", c.surrogate.momentum);
            read(s, "batch_size", c.surrogate.batch_size);
            read(s, "clip_quantile", c.surrogate.clip_quantile);
            read(s, "clip_factor", c.surrogate.clip_factor);
            read(s, "refit", c.surrogate_refit);
        }
        if (j.contains("high_risk")) {
            const auto& s = j.at("high_risk");
            only_keys(s, "high_risk", {"pool", "retain"});
            read(s, "pool", c.high_risk_pool);
            read(s, "retain", c.high_risk_retain);
        }
        if (j.contains("schedule")) {
            const auto& s = j.at("schedule");
            only_keys(s, "schedule", {"T", "beta_lo", "beta_hi", "terminal_limit"});
            read(s, "T", c.schedule.T);
            read(s, "beta_lo", c.schedule.beta_lo);
            read(s, "beta_hi", c.schedule.beta_hi);
            read(s, "terminal_limit", c.schedule.terminal_limit);
        }
        if (j.contains("denoiser")) {
            const auto& s = j.at("denoiser");
            only_keys(s, "denoiser", {"state_hidden", "time_dim", "trunk_hidden", "trunk_layers", "epochs",
                                      "batch_size", "learning_rate", "weight_gamma"});
            read(s, "state_hidden", c.denoiser.state_hidden);
            read(s, "time_dim", c.denoiser.time_dim);
            read(s, "trunk_hidden", c.denoiser.trunk_hidden);
            read(s, "trunk_layers", c.denoiser.trunk_layers);
            read(s, "epochs", c.denoiser.epochs);
            read(s, "batch_size", c.denoiser.batch_size);
            read(s, "learning_rate", c.denoiser.learning_rate);
            read(s, "weight_gamma", c.weight_gamma);
        }
        if (j.contains("guidance")) {
            const auto& s = j.at("guidance");
            only_keys(s, "guidance", {"lambda", "start_step", "clip", "sharpness"});
            read(s, "lambda", c.guidance.lambda);
            read(s, "start_step", c.guidance.start_step);
            read(s, "clip", c.guidance.clip);
            read(s, "sharpness", c.guidance.sharpness);
        }
        if (j.contains("screen")) {
            const auto& s = j.at("screen");
            only_keys(s, "screen", {"method", "budget", "dedup", "delta_miss", "confidence", "calibration_states",
                                    "calibration_samples", "enumeration_cap", "score_pool"});
            read(s, "method", c.method);
            read(s, "budget", c.budget);
            read(s, "dedup", c.dedup);
            read(s, "delta_miss", c.delta_miss);
            read(s, "confidence", c.confidence);
            read(s, "calibration_states", c.calibration_states);
            read(s, "calibration_samples", c.calibration_samples);
            read(s, "enumeration_cap", c.enumeration_cap);
            read(s, "score_pool", c.score_pool);
        }
        if (j.contains("evaluate")) {
            const auto& s = j.at("evaluate");
            only_keys(s, "evaluate", {"m_max"});
            read(s, "m_max", c.m_max);
        }
        if (j.contains("bench")) {
            const auto& s = j.at("bench");
            only_keys(s, "bench", {"k", "m", "cap"});
            read(s, "k", c.bench_k);
            read(s, "m", c.bench_m);
            read(s, "cap", c.bench_cap);
        }
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    return c;
}

RunConfig load_config(const std::string& path) {
    Json j;
    try {
        j = Json::parse(read_text(path));
    } catch (const Json::exception& e) {
        throw ValidationError("config " + path + ": " + e.what());
    }
    RunConfig c = config_from_json(j);
    // a relative case path is taken relative to the config file
    if (!c.case_path.empty() && std::filesystem::path(c.case_path).is_relative())
        c.case_path = (std::filesystem::path(path).parent_path() / c.case_path).lexically_normal().string();
    return c;
}

std::string config_hash(const RunConfig& c) {
    // the case enters through its content hash; out and parallelism do not affect results
    Json j = to_json(c);
    j.erase("case");
    j.erase("out");
    j.erase("parallelism");
    return hex64(fnv1a(j.dump()));
}

}  // namespace nkscreen

#include "nkscreen/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "nkscreen/errors.hpp"
#include "nkscreen/rng.hpp"

namespace nkscreen {

namespace fs = std::filesystem;

namespace {

// derive_seed tags of the pipeline stages
enum Stage : std::uint64_t {
    kTrainStates = 1,
    kTestStates = 2,
    kSurrogate = 3,
    kHighRisk = 4,
    kRefit = 5,
    kDenoiser = 6,
    kCalibration = 7,
    kScreen = 8,
    kBench = 9,
};

std::uint64_t stage_seed(const RunConfig& c, Stage s) { return derive_seed(c.seed, {s}); }

struct Workspace {
    fs::path root;
    fs::path operator/(const std::string& rel) const { return root / rel; }
};

/// Collects outputs so the manifest can list their hashes.
class Writer {
  public:
    explicit Writer(fs::path root) : root_(std::move(root)) {}

    void write(const std::string& rel, const std::string& text) {
        write_text(root_ / rel, text);
        outputs_[rel] = hex64(fnv1a(text));
    }
    void write_json(const std::string& rel, const Json& j) { write(rel, j.dump(1) + "\n"); }

    void manifest(const std::string& command, const RunConfig& config, const std::string& case_hash,
                  const Json& extra = Json::object()) {
        Json seeds = Json::object();
        const std::pair<const char*, Stage> tags[] = {
            {"train_states", kTrainStates}, {"test_states", kTestStates}, {"surrogate", kSurrogate},
            {"high_risk", kHighRisk},       {"refit", kRefit},            {"denoiser", kDenoiser},
            {"calibration", kCalibration},  {"screen", kScreen},          {"bench", kBench}};
        for (const auto& [name, s] : tags) seeds[name] = stage_seed(config, s);
        Json m = {{"format", "nkscreen.manifest"},
                  {"version", kFormatVersion},
                  {"command", command},
                  {"config_hash", config_hash(config)},
                  {"case_hash", case_hash},
                  {"seed", config.seed},
                  {"stage_seeds", seeds},
                  {"config", to_json(config)},
                  {"outputs", outputs_}};
        m["config"].erase("out");
        m["config"].erase("parallelism");
        for (const auto& [k, v] : extra.items()) m[k] = v;
        write_text(root_ / ("manifest_" + command + ".json"), m.dump(1) + "\n");
    }

  private:
    fs::path root_;
    std::map<std::string, std::string> outputs_;
};

struct Loaded {
    NetworkCase net;
    std::string case_hash;
};

Loaded load_network(const RunConfig& c) {
    if (c.case_path.empty()) throw ValidationError("no case given (set \"case\" in the config)");
    if (!fs::exists(c.case_path)) throw ValidationError("case file not found: " + c.case_path);
    return {load_case(c.case_path), hash_file(c.case_path)};
}

std::vector<OperatingState> read_states(const fs::path& path) {
    if (!fs::exists(path)) throw ValidationError("missing " + path.string() + " (run the dataset command first)");
    std::vector<OperatingState> out;
    for (const auto& j : parse_jsonl(read_text(path))) out.push_back(state_from_json(j));
    return out;
}

std::string states_jsonl(const std::vector<OperatingState>& states) {
    std::vector<Json> rows;
    for (const auto& s : states) rows.push_back(to_json(s));
    return to_jsonl(rows);
}

std::string records_jsonl(const std::vector<SeverityRecord>& records, const char* method = nullptr) {
    std::vector<Json> rows;
    for (const auto& r : records) {
        Json j = to_json(r);
        if (method) j["method"] = method;
        rows.push_back(std::move(j));
    }
    return to_jsonl(rows);
}

std::vector<SeverityRecord> read_records(const fs::path& path) {
    if (!fs::exists(path)) throw ValidationError("missing " + path.string());
    std::vector<SeverityRecord> out;
    for (const auto& j : parse_jsonl(read_text(path))) out.push_back(record_from_json(j));
    return out;
}

double read_tau(const Workspace& ws) {
    const auto meta = ws / "dataset/meta.json";
    if (!fs::exists(meta)) throw ValidationError("missing " + meta.string() + " (run the dataset command first)");
    return Json::parse(read_text(meta)).at("tau").get<double>();
}

struct TrainedModels {
    std::optional<EvgnnModel> surrogate;
    std::optional<DenoiserModel> denoiser;
    std::optional<NoiseSchedule> schedule;

    Models view() const {
        return {surrogate ? &*surrogate : nullptr, denoiser ? &*denoiser : nullptr, schedule ? &*schedule : nullptr};
    }
};

TrainedModels read_models(const Workspace& ws, const NetworkCase& net, bool required) {
    TrainedModels m;
    const auto ev = ws / "models/evgnn.json", den = ws / "models/denoiser.json", sc = ws / "models/schedule.json";
    if (!fs::exists(ev) || !fs::exists(den) || !fs::exists(sc)) {
        if (required) throw ValidationError("trained models missing under " + (ws / "models").string() +
                                            " (run the train command first)");
        return m;
    }
    m.surrogate = evgnn_from_json(Json::parse(read_text(ev)), net);
    m.denoiser = denoiser_from_json(Json::parse(read_text(den)));
    const auto p = schedule_from_json(Json::parse(read_text(sc)));
    m.schedule = make_schedule(p.T, p.beta_lo, p.beta_hi, p.terminal_limit);
    if (m.denoiser->n_branch != net.branch_count()) throw ValidationError("generator was trained on a different case");
    return m;
}

/// Records grouped into per-state runs, in first-appearance order.
std::vector<ScreeningRun> group_runs(const std::vector<SeverityRecord>& records, Method method) {
    std::vector<ScreeningRun> runs;
    std::map<std::string, std::size_t> index;
    for (const auto& r : records) {
        auto [it, fresh] = index.emplace(r.state_id, runs.size());
        if (fresh) {
            runs.emplace_back();
            runs.back().method = method;
            runs.back().state_id = r.state_id;
        }
        runs[it->second].records.push_back(r);
    }
    return runs;
}

std::string screen_csv(const std::vector<ScreeningRun>& runs, const SeverityConfig& cfg) {
    std::ostringstream out;
    out << "state_id,rank,branches,k,severity,converged,in_band,outcome\n";
    for (const auto& run : runs)
        for (std::size_t i = 0; i < run.records.size(); ++i) {
            const auto& r = run.records[i];
            out << csv_field(r.state_id) << ',' << i + 1 << ',' << r.c.to_string() << ',' << r.c.k() << ','
                << csv_number(r.s) << ',' << r.converged << ',' << r.in_band << ','
                << (r.islanded ? "islanded" : outcome_name(classify(r.s, cfg))) << '\n';
        }
    return out.str();
}

const std::vector<Method> kMethods = {Method::diffusion, Method::random, Method::evgnn_rank, Method::exhaustive};

}  // namespace

void cmd_dataset(const RunConfig& c, std::ostream& log) {
    c.validate();
    const auto [net, case_hash] = load_network(c);
    Writer w(c.out_dir);
    const auto train = sample_states(net, c.train_states, stage_seed(c, kTrainStates), c.sampling, c.solver, "s");
    const auto test = sample_states(net, c.test_states, stage_seed(c, kTestStates), c.sampling, c.solver, "t");
    log << "dataset: " << train.size() << " train and " << test.size() << " test states on " << net.name << "\n";

    // labels need tau only for the in-band flag; resolve it from the data when not given
    auto d = build_n1_dataset(net, train, c.severity(c.tau > 0 ? c.tau : 1.0), c.solver, c.threads(),
                              c.islanding_as_fail);
    double tau = c.tau;
    if (tau <= 0.0) {
        std::vector<double> single;
        for (const auto& r : d.records)
            if (r.c.k() == 1 && r.converged) single.push_back(r.s);
        if (single.empty()) throw ValidationError("no convergent single outage to set tau from");
        tau = quantile_threshold(single, c.tau_quantile);
        if (!std::isfinite(tau)) throw ValidationError("tau quantile is undefined for this sample");
    }
    const auto cfg = c.severity(tau);
    for (auto& r : d.records) r.in_band = r.converged && classify(r.s, cfg) == Outcome::convergent_in_band;
    log << "dataset: " << d.records.size() << " N-1 records, tau = " << tau << "\n";

    w.write("dataset/states_train.jsonl", states_jsonl(train));
    w.write("dataset/states_test.jsonl", states_jsonl(test));
    w.write("dataset/n1_records.jsonl", records_jsonl(d.records));
    w.write_json("dataset/meta.json", {{"format", "nkscreen.dataset"},
                                       {"version", kFormatVersion},
                                       {"case", net.name},
                                       {"case_hash", case_hash},
                                       {"tau", tau},
                                       {"records", d.records.size()},
                                       {"train_states", train.size()},
                                       {"test_states", test.size()}});
    w.manifest("dataset", c, case_hash);
}

void cmd_train(const RunConfig& c, std::ostream& log) {
    c.validate();
    const auto [net, case_hash] = load_network(c);
    const Workspace ws{c.out_dir};
    const auto states = read_states(ws / "dataset/states_train.jsonl");
    const auto n1 = read_records(ws / "dataset/n1_records.jsonl");
    const double tau = read_tau(ws);
    const auto cfg = c.severity(tau);
    Writer w(c.out_dir);

    const auto n1_examples = surrogate_examples(states, n1);
    auto surrogate = train_evgnn(net, n1_examples, c.surrogate, stage_seed(c, kSurrogate));
    log << "train: surrogate on " << n1_examples.size() << " records, loss " << surrogate.final_loss << "\n";

    std::vector<StateContext> ctxs;
    for (const auto& s : states) ctxs.emplace_back(net, s, c.solver);
    const FeasibleSetSpec spec(net, c.k_range.k_min);
    const auto high_risk = build_nk_training_set(surrogate, ctxs, spec, c.k_range, c.high_risk_pool,
                                                 c.high_risk_retain, stage_seed(c, kHighRisk), cfg, c.solver,
                                                 c.threads());
    if (high_risk.empty()) throw ValidationError("high-risk set is empty; raise high_risk.retain");
    double mean_label = 0.0;
    for (const auto& r : high_risk) mean_label += r.s;
    mean_label /= static_cast<double>(high_risk.size());
    log << "train: " << high_risk.size() << " labeled high-risk patterns, mean severity " << mean_label << "\n";

    const double first_loss = surrogate.final_loss;
    if (c.surrogate_refit) {
        auto all = n1_examples;
        const auto extra = surrogate_examples(states, high_risk);
        all.insert(all.end(), extra.begin(), extra.end());
        surrogate = train_evgnn(net, all, c.surrogate, stage_seed(c, kRefit));
        log << "train: surrogate refit on " << all.size() << " records, loss " << surrogate.final_loss << "\n";
    }

    const auto sched = make_schedule(c.schedule.T, c.schedule.beta_lo, c.schedule.beta_hi, c.schedule.terminal_limit);
    const auto denoiser = train_denoiser(diffusion_examples(states, high_risk), sched, c.denoiser,
                                         SeverityWeight{tau, c.weight_gamma}, stage_seed(c, kDenoiser));
    log << "train: generator loss " << denoiser.loss_history.front() << " -> " << denoiser.loss_history.back()
        << "\n";

    const Models models{&surrogate, &denoiser, &sched};
    ScreenOptions opts = c.screen_options();
    opts.method = Method::diffusion;
    const std::vector<StateContext> calib(ctxs.begin(),
                                          ctxs.begin() + std::min<std::size_t>(c.calibration_states, ctxs.size()));
    const auto capture = calibrate_capture(calib, spec, models, opts, c.calibration_samples, c.confidence, cfg,
                                           c.solver, stage_seed(c, kCalibration));
    log << "train: capture " << capture.successes << "/" << capture.trials << ", lower bound " << capture.p_lower
        << "\n";

    w.write("models/high_risk.jsonl", records_jsonl(high_risk));
    w.write_json("models/evgnn.json", to_json(surrogate));
    w.write_json("models/denoiser.json", to_json(denoiser));
    w.write_json("models/schedule.json", to_json(c.schedule));
    w.write_json("models/capture.json", to_json(capture));
    const auto& dl = denoiser.loss_history;
    w.write_json("models/training_metrics.json",
                 {{"surrogate_initial_loss", first_loss},
                  {"surrogate_final_loss", surrogate.final_loss},
                  {"surrogate_loss_history", surrogate.loss_history},
                  {"generator_loss_history", dl},
                  {"generator_loss_decreased", dl.size() >= 2 && dl.back() < dl.front()},
                  {"high_risk_records", high_risk.size()},
                  {"high_risk_mean_severity", mean_label}});
    w.manifest("train", c, case_hash);
}

void cmd_screen(const RunConfig& c, std::ostream& log) {
    c.validate();
    const auto [net, case_hash] = load_network(c);
    const Workspace ws{c.out_dir};
    const auto states = read_states(ws / "dataset/states_test.jsonl");
    const double tau = read_tau(ws);
    const auto cfg = c.severity(tau);
    const auto opts = c.screen_options();
    const bool needs_models = opts.method == Method::diffusion || opts.method == Method::evgnn_rank;
    const auto trained = read_models(ws, net, needs_models);
    const bool capture_budget = opts.method != Method::exhaustive && c.budget == 0;
    CaptureEstimate capture;
    if (capture_budget) {
        const auto path = ws / "models/capture.json";
        if (!fs::exists(path)) throw ValidationError("missing " + path.string() + " (run the train command first)");
        capture = capture_from_json(Json::parse(read_text(path)));
    }
    const FeasibleSetSpec spec(net, c.k_range.k_min);
    Writer w(c.out_dir);
    std::vector<ScreeningRun> runs;
    long solves = 0;
    for (std::size_t i = 0; i < states.size(); ++i) {
        const StateContext ctx(net, states[i], c.solver);
        const auto seed = derive_seed(c.seed, {kScreen, i});
        runs.push_back(capture_budget
                           ? screen_online(ctx, spec, trained.view(), capture, c.delta_miss, opts, cfg, c.solver, seed)
                           : screen_state(ctx, spec, trained.view(), opts, cfg, c.solver, seed));
        solves += runs.back().solves;
    }
    const long budget = runs.empty() ? 0 : runs.front().budget;
    log << "screen: " << method_name(opts.method) << " on " << runs.size() << " states, budget "
        << (opts.method == Method::exhaustive ? std::string("all") : std::to_string(budget)) << ", " << solves
        << " ACPF solves\n";

    std::vector<SeverityRecord> all;
    for (const auto& r : runs) all.insert(all.end(), r.records.begin(), r.records.end());
    const std::string name = method_name(opts.method);
    w.write("screen/" + name + ".jsonl", records_jsonl(all, name.c_str()));
    w.write("screen/" + name + ".csv", screen_csv(runs, cfg));
    Json extra = {{"method", name}, {"budget", budget}, {"solves", solves}};
    if (capture_budget) extra["capture"] = to_json(capture);
    w.manifest("screen_" + name, c, case_hash, extra);
}

void cmd_oracle(const RunConfig& c, std::ostream& log) {
    c.validate();
    const auto [net, case_hash] = load_network(c);
    const Workspace ws{c.out_dir};
    const auto states = read_states(ws / "dataset/states_test.jsonl");
    const double tau = read_tau(ws);
    const auto cfg = c.severity(tau);
    ScreenOptions opts = c.screen_options();
    opts.method = Method::exhaustive;
    const FeasibleSetSpec spec(net, c.k_range.k_min);
    Writer w(c.out_dir);
    std::vector<SeverityRecord> all;
    std::ostringstream summary;
    summary << "state_id,patterns,severe,tau\n";
    for (std::size_t i = 0; i < states.size(); ++i) {
        const StateContext ctx(net, states[i], c.solver);
        const auto run = screen_state(ctx, spec, {}, opts, cfg, c.solver, 0);
        const auto severe = std::count_if(run.records.begin(), run.records.end(),
                                          [&](const SeverityRecord& r) { return r.s >= tau; });
        summary << csv_field(run.state_id) << ',' << run.records.size() << ',' << severe << ',' << csv_number(tau)
                << '\n';
        all.insert(all.end(), run.records.begin(), run.records.end());
    }
    log << "oracle: " << all.size() << " labeled patterns over " << states.size() << " states\n";
    w.write("oracle/records.jsonl", records_jsonl(all, "exhaustive"));
    w.write("oracle/summary.csv", summary.str());
    w.manifest("oracle", c, case_hash);
}

void cmd_evaluate(const RunConfig& c, std::ostream& log) {
    c.validate();
    const auto [net, case_hash] = load_network(c);
    const Workspace ws{c.out_dir};
    const double tau = read_tau(ws);
    Writer w(c.out_dir);

    std::map<Method, std::vector<ScreeningRun>> runs;
    for (Method m : kMethods) {
        const auto path = ws / ("screen/" + std::string(method_name(m)) + ".jsonl");
        if (!fs::exists(path)) continue;
        auto grouped = group_runs(read_records(path), m);
        if (!grouped.empty()) runs[m] = std::move(grouped);
    }
    if (runs.empty()) throw ValidationError("no screening runs with records under " + (ws / "screen").string());

    std::ostringstream topm, comp;
    topm << "method,m,mean_top_m_severity,states\n";
    comp << "method,records,convergent_in_band,convergent_out_of_band,nonconvergent,frac_in_band,frac_out_of_band,"
            "frac_nonconvergent,convergent_pct,in_band_pct_of_convergent\n";
    Json summary = {{"tau", tau}, {"methods", Json::object()}};
    std::map<Method, TopmCurve> curves;
    for (const auto& [m, rs] : runs) {
        const auto curve = topm_curve(rs, c.m_max);
        if (curve.states_excluded > 0)
            log << "evaluate: warning: " << curve.states_excluded << " " << method_name(m)
                << " state(s) without convergent records excluded from the top-m curve\n";
        for (int k = 1; k <= c.m_max; ++k)
            topm << method_name(m) << ',' << k << ',' << csv_number(curve.mean[k - 1]) << ',' << curve.states_used
                 << '\n';
        const auto cp = outcome_composition(rs);
        comp << method_name(m) << ',' << cp.total << ',' << cp.in_band << ',' << cp.out_of_band << ','
             << cp.nonconvergent << ',' << csv_number(cp.in_band_fraction()) << ','
             << csv_number(cp.out_of_band_fraction()) << ',' << csv_number(cp.nonconvergent_fraction()) << ','
             << csv_number(100.0 * cp.convergent_fraction()) << ',' << csv_number(100.0 * cp.in_band_among_convergent())
             << '\n';
        summary["methods"][method_name(m)] = {{"states", rs.size()},
                                              {"records", cp.total},
                                              {"convergent_pct", 100.0 * cp.convergent_fraction()},
                                              {"in_band_pct_of_convergent", 100.0 * cp.in_band_among_convergent()},
                                              {"top1", curve.mean.front()},
                                              {"top_m_max", curve.mean.back()}};
        curves[m] = curve;
    }
    if (curves.count(Method::diffusion) && curves.count(Method::random)) {
        const auto& a = curves[Method::diffusion].mean;
        const auto& b = curves[Method::random].mean;
        bool dominates = true;
        for (std::size_t i = 0; i < a.size(); ++i) dominates = dominates && a[i] >= b[i];
        summary["diffusion_dominates_random_topm"] = dominates;
    }

    const auto oracle_path = ws / "oracle/records.jsonl";
    if (fs::exists(oracle_path)) {
        std::map<std::string, std::vector<ContingencyVector>> severe;
        for (const auto& r : read_records(oracle_path))
            if (r.s >= tau) severe[r.state_id].push_back(r.c);
        std::ostringstream cov;
        cov << "method,state_id,coverage,severe\n";
        for (const auto& [m, rs] : runs) {
            double sum = 0.0;
            int counted = 0;
            for (const auto& run : rs) {
                const auto it = severe.find(run.state_id);
                if (it == severe.end()) continue;  // coverage undefined without severe patterns
                std::vector<ContingencyVector> got;
                for (const auto& r : run.records) got.push_back(r.c);
                const double v = coverage_metric(got, it->second);
                cov << method_name(m) << ',' << csv_field(run.state_id) << ',' << csv_number(v) << ','
                    << it->second.size() << '\n';
                sum += v;
                ++counted;
            }
            if (counted) summary["methods"][method_name(m)]["mean_coverage"] = sum / counted;
        }
        w.write("eval/coverage.csv", cov.str());
    }
    w.write("eval/topm.csv", topm.str());
    w.write("eval/composition.csv", comp.str());
    w.write_json("eval/summary.json", summary);
    log << "evaluate: " << runs.size() << " method(s) summarized\n";
    w.manifest("evaluate", c, case_hash);
}

void cmd_bench(const RunConfig& c, std::ostream& log) {
    c.validate();
    const auto [net, case_hash] = load_network(c);
    const Workspace ws{c.out_dir};
    const auto states = read_states(ws / "dataset/states_test.jsonl");
    const double tau = read_tau(ws);
    const auto trained = read_models(ws, net, false);
    if (!trained.denoiser) log << "bench: no trained models; only exhaustive rows are measured\n";
    ScreenOptions opts = c.screen_options();
    opts.enumeration_cap = c.bench_cap;
    opts.guidance = c.guidance;
    if (!trained.surrogate) opts.guidance.lambda = 0.0;
    const StateContext ctx(net, states.front(), c.solver);
    const FeasibleSetSpec spec(net, 1);
    const auto rows = runtime_benchmark(ctx, spec, trained.view(), c.bench_k, c.bench_m, opts, c.severity(tau),
                                        c.solver, stage_seed(c, kBench));
    std::ostringstream out;
    out << "k,method,seconds,candidates,solves,skipped,note\n";
    for (const auto& r : rows) {
        out << r.k << ',' << method_name(r.method) << ',' << csv_number(r.seconds) << ',' << r.candidates << ','
            << r.solves << ',' << r.skipped << ',' << csv_field(r.note) << '\n';
        log << "bench: k=" << r.k << " " << method_name(r.method) << " "
            << (r.skipped ? r.note : csv_number(r.seconds) + " s, " + std::to_string(r.solves) + " solves") << "\n";
    }
    Writer w(c.out_dir);
    w.write("bench/bench.csv", out.str());
    w.manifest("bench", c, case_hash, {{"state_id", ctx.state.state_id}});
}

int run_command(const std::string& name, const RunConfig& config, std::ostream& log, std::ostream& err) {
    static const std::map<std::string, void (*)(const RunConfig&, std::ostream&)> commands = {
        {"dataset", cmd_dataset}, {"train", cmd_train}, {"screen", cmd_screen},
        {"evaluate", cmd_evaluate}, {"bench", cmd_bench}, {"oracle", cmd_oracle}};
    const auto it = commands.find(name);
    if (it == commands.end()) {
        err << "error: unknown command '" << name << "'\n";
        return kExitUsage;
    }
    try {
        it->second(config, log);
        return kExitOk;
    } catch (const UnboundedBudgetError& e) {
        err << "error: unbounded budget: " << e.what() << "\n";
        return kExitUnboundedBudget;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitError;
    }
}

}  // namespace nkscreen

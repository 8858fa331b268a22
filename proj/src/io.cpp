#include "nkscreen/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "nkscreen/errors.hpp"

namespace nkscreen {

namespace fs = std::filesystem;

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string hash_file(const fs::path& path) { return hex64(fnv1a(read_text(path))); }

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ValidationError("cannot write " + path.string());
        out << text;
        if (!out) throw ValidationError("write failed for " + path.string());
    }
    fs::rename(tmp, path);
}

namespace {

void check_format(const Json& j, const char* format) {
    if (!j.is_object() || j.value("format", "") != format)
        throw ValidationError(std::string("expected a '") + format + "' document");
    if (j.value("version", 0) != kFormatVersion)
        throw ValidationError(std::string("unsupported ") + format + " version " + j.value("version", Json()).dump());
}

Json matrix_json(const Eigen::MatrixXd& m) {
    return {{"rows", m.rows()}, {"cols", m.cols()}};
}

}  // namespace

Json to_json(const OperatingState& s) {
    Json load = Json::array();
    for (const auto& [p, q] : s.load_scale) load.push_back({p, q});
    return {{"state_id", s.state_id}, {"load_scale", load}, {"gen_scale", s.gen_scale},
            {"features", s.feature_vector}};
}

OperatingState state_from_json(const Json& j) {
    try {
        OperatingState s;
        s.state_id = j.at("state_id").get<std::string>();
        for (const auto& pq : j.at("load_scale")) s.load_scale.emplace_back(pq.at(0).get<double>(), pq.at(1).get<double>());
        s.gen_scale = j.at("gen_scale").get<std::vector<double>>();
        s.feature_vector = j.at("features").get<std::vector<double>>();
        return s;
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("malformed state record: ") + e.what());
    }
}

Json to_json(const SeverityRecord& r) {
    return {{"state_id", r.state_id},   {"sample_index", r.sample_index}, {"n", r.c.n()},
            {"branches", r.c.outaged()}, {"k", r.c.k()},                   {"severity", r.s},
            {"converged", r.converged},  {"islanded", r.islanded},         {"in_band", r.in_band},
            {"iterations", r.iterations}};
}

SeverityRecord record_from_json(const Json& j) {
    try {
        SeverityRecord r;
        r.state_id = j.at("state_id").get<std::string>();
        r.sample_index = j.at("sample_index").get<int>();
        r.c = ContingencyVector::from_indices(j.at("n").get<int>(), j.at("branches").get<std::vector<int>>());
        r.s = j.at("severity").get<double>();
        r.converged = j.at("converged").get<bool>();
        r.islanded = j.at("islanded").get<bool>();
        r.in_band = j.at("in_band").get<bool>();
        r.iterations = j.at("iterations").get<int>();
        return r;
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("malformed severity record: ") + e.what());
    }
}

std::string to_jsonl(const std::vector<Json>& rows) {
    std::string out;
    for (const auto& r : rows) {
        out += r.dump();
        out += '\n';
    }
    return out;
}

std::vector<Json> parse_jsonl(const std::string& text) {
    std::vector<Json> rows;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            rows.push_back(Json::parse(line));
        } catch (const Json::exception& e) {
            throw ParseError(lineno, e.what());
        }
    }
    return rows;
}

Json to_json(const CaptureEstimate& e) {
    return {{"format", "nkscreen.capture"}, {"version", kFormatVersion}, {"successes", e.successes},
            {"trials", e.trials},          {"p_hat", e.p_hat},          {"p_lower", e.p_lower},
            {"confidence", e.confidence}};
}

CaptureEstimate capture_from_json(const Json& j) {
    check_format(j, "nkscreen.capture");
    CaptureEstimate e;
    e.successes = j.at("successes").get<long>();
    e.trials = j.at("trials").get<long>();
    e.p_hat = j.at("p_hat").get<double>();
    e.p_lower = j.at("p_lower").get<double>();
    e.confidence = j.at("confidence").get<double>();
    return e;
}

Json to_json(const ScheduleParams& p) {
    return {{"format", "nkscreen.schedule"}, {"version", kFormatVersion}, {"T", p.T},
            {"beta_lo", p.beta_lo},         {"beta_hi", p.beta_hi},     {"terminal_limit", p.terminal_limit}};
}

ScheduleParams schedule_from_json(const Json& j) {
    check_format(j, "nkscreen.schedule");
    return {j.at("T").get<int>(), j.at("beta_lo").get<double>(), j.at("beta_hi").get<double>(),
            j.at("terminal_limit").get<double>()};
}

Json to_json(const EvgnnModel& m) {
    const auto& h = m.hyper;
    Json ends = Json::array();
    for (const auto& [a, b] : m.ends) ends.push_back({a, b});
    Json shapes = Json::array();
    for (const auto& l : m.layers) shapes.push_back(matrix_json(l.w_self));
    return {{"format", "nkscreen.evgnn"},
            {"version", kFormatVersion},
            {"hyper",
             {{"layers", h.layers},
              {"hidden", h.hidden},
              {"epochs", h.epochs},
              {"learning_rate", h.learning_rate},
              {"momentum", h.momentum},
              {"batch_size", h.batch_size},
              {"clip_quantile", h.clip_quantile},
              {"clip_factor", h.clip_factor}}},
            {"n_bus", m.n_bus},
            {"n_gen", m.n_gen},
            {"ends", ends},
            {"layer_shapes", shapes},
            {"feat_mean", m.feat_mean},
            {"feat_scale", m.feat_scale},
            {"target_cap", m.target_cap},
            {"theta", m.flatten()},
            {"final_loss", m.final_loss},
            {"loss_history", m.loss_history}};
}

EvgnnModel evgnn_from_json(const Json& j, const NetworkCase& net) {
    check_format(j, "nkscreen.evgnn");
    try {
        const auto& jh = j.at("hyper");
        EvgnnHyper h;
        h.layers = jh.at("layers").get<int>();
        h.hidden = jh.at("hidden").get<int>();
        h.epochs = jh.at("epochs").get<int>();
        h.learning_rate = jh.at("learning_rate").get<double>();
        h.momentum = jh.at("momentum").get<double>();
        h.batch_size = jh.at("batch_size").get<int>();
        h.clip_quantile = jh.at("clip_quantile").get<double>();
        h.clip_factor = jh.at("clip_factor").get<double>();
        h.validate();
        EvgnnModel m = make_evgnn(net, h, 0);
        std::vector<std::pair<int, int>> ends;
        for (const auto& e : j.at("ends")) ends.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
        if (ends != m.ends || j.at("n_bus").get<int>() != m.n_bus || j.at("n_gen").get<int>() != m.n_gen)
            throw ValidationError("surrogate model was built for a different network topology");
        m.feat_mean = j.at("feat_mean").get<std::vector<double>>();
        m.feat_scale = j.at("feat_scale").get<std::vector<double>>();
        m.target_cap = j.at("target_cap").get<double>();
        m.unflatten(j.at("theta").get<std::vector<double>>());
        m.final_loss = j.at("final_loss").get<double>();
        m.loss_history = j.at("loss_history").get<std::vector<double>>();
        return m;
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("malformed surrogate document: ") + e.what());
    }
}

Json to_json(const DenoiserModel& m) {
    const auto& h = m.hyper;
    return {{"format", "nkscreen.denoiser"},
            {"version", kFormatVersion},
            {"hyper",
             {{"state_hidden", h.state_hidden},
              {"time_dim", h.time_dim},
              {"trunk_hidden", h.trunk_hidden},
              {"trunk_layers", h.trunk_layers},
              {"epochs", h.epochs},
              {"batch_size", h.batch_size},
              {"learning_rate", h.learning_rate}}},
            {"n_branch", m.n_branch},
            {"n_features", m.n_features},
            {"x_min", m.x_min},
            {"x_range", m.x_range},
            {"theta", m.flatten()},
            {"loss_history", m.loss_history}};
}

DenoiserModel denoiser_from_json(const Json& j) {
    check_format(j, "nkscreen.denoiser");
    try {
        const auto& jh = j.at("hyper");
        DenoiserHyper h;
        h.state_hidden = jh.at("state_hidden").get<int>();
        h.time_dim = jh.at("time_dim").get<int>();
        h.trunk_hidden = jh.at("trunk_hidden").get<int>();
        h.trunk_layers = jh.at("trunk_layers").get<int>();
        h.epochs = jh.at("epochs").get<int>();
        h.batch_size = jh.at("batch_size").get<int>();
        h.learning_rate = jh.at("learning_rate").get<double>();
        h.validate();
        DenoiserModel m = make_denoiser(j.at("n_branch").get<int>(), j.at("n_features").get<int>(), h, 0);
        m.x_min = j.at("x_min").get<std::vector<double>>();
        m.x_range = j.at("x_range").get<std::vector<double>>();
        if (m.x_min.size() != static_cast<std::size_t>(m.n_features) || m.x_range.size() != m.x_min.size())
            throw ValidationError("denoiser normalization has the wrong length");
        m.unflatten(j.at("theta").get<std::vector<double>>());
        m.loss_history = j.at("loss_history").get<std::vector<double>>();
        return m;
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("malformed denoiser document: ") + e.what());
    }
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

std::string csv_number(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace nkscreen

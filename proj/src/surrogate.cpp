#include "nkscreen/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nkscreen/errors.hpp"
#include "nkscreen/rng.hpp"

namespace nkscreen {

namespace {

using RMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double softplus(double y) { return y > 30.0 ? y : std::log1p(std::exp(y)); }
double sigmoid(double y) { return 1.0 / (1.0 + std::exp(-y)); }
double inverse_softplus(double s) { return s > 30.0 ? s : std::log(std::expm1(s)); }

int layer_input_width(const EvgnnModel& m, int l) { return l == 0 ? EvgnnModel::kInputFeatures : m.hyper.hidden; }

/// Raw continuous node inputs (P load, Q load, P gen, V set) for one state.
void raw_node_inputs(const EvgnnModel& m, std::span<const double> x, double* out /* n x 4 row-major */) {
    const int n = m.n_bus, ng = m.n_gen;
    if (static_cast<int>(x.size()) != 2 * n + 2 * ng) throw ValidationError("state feature vector has the wrong length");
    std::fill(out, out + 4 * n, 0.0);
    std::vector<char> has_vset(n, 0);
    for (int i = 0; i < n; ++i) {
        out[4 * i] = x[i];
        out[4 * i + 1] = x[n + i];
    }
    for (int g = 0; g < ng; ++g) {
        const int b = m.gen_bus[g];
        out[4 * b + 2] += x[2 * n + g];
        if (!has_vset[b]) {
            out[4 * b + 3] = x[2 * n + ng + g];
            has_vset[b] = 1;
        }
    }
}

void node_inputs(const EvgnnModel& m, std::span<const double> x, RMat& h, int row0) {
    const int n = m.n_bus;
    std::vector<double> raw(4 * static_cast<std::size_t>(n));
    raw_node_inputs(m, x, raw.data());
    for (int i = 0; i < n; ++i) {
        auto r = h.row(row0 + i);
        for (int f = 0; f < 4; ++f) r(f) = (raw[4 * i + f] - m.feat_mean[f]) / m.feat_scale[f];
        r(4) = m.bus_type[i] == 0 ? 1.0 : 0.0;
        r(5) = m.bus_type[i] == 1 ? 1.0 : 0.0;
        r(6) = m.bus_type[i] == 2 ? 1.0 : 0.0;
    }
}

struct Forward {
    int batch = 0;
    std::vector<RMat> h;                // h[0..L], (B n) x F_l
    std::vector<RMat> msg;              // msg[l] = A_l h[l]
    std::vector<Eigen::MatrixXd> edge;  // edge[l]: B x E weights g kappa (1 - c)
    RMat pooled;                        // B x H
    Eigen::VectorXd y, s;
};

void aggregate(const EvgnnModel& m, const RMat& h, const Eigen::MatrixXd& w, RMat& out) {
    const int n = m.n_bus;
    out.setZero(h.rows(), h.cols());
    for (int b = 0; b < w.rows(); ++b) {
        const int base = b * n;
        for (int e = 0; e < m.n_branch(); ++e) {
            const double a = w(b, e);
            if (a == 0.0) continue;
            const int i = base + m.ends[e].first, j = base + m.ends[e].second;
            out.row(i).noalias() += a * h.row(j);
            out.row(j).noalias() += a * h.row(i);
        }
    }
}

void check_relaxed(const EvgnnModel& m, std::span<const double> c) {
    if (static_cast<int>(c.size()) != m.n_branch()) throw ValidationError("contingency relaxation has the wrong length");
    for (double v : c)
        if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("contingency relaxation entries must lie in [0, 1]");
}

/// xs[b] and cs[b] describe example b.
Forward forward(const EvgnnModel& m, const std::vector<std::span<const double>>& xs,
                const std::vector<std::span<const double>>& cs) {
    const int bsz = static_cast<int>(cs.size()), n = m.n_bus, nb = m.n_branch();
    const int L = static_cast<int>(m.layers.size());
    Forward f;
    f.batch = bsz;
    f.h.resize(L + 1);
    f.msg.resize(L);
    f.edge.resize(L);
    f.h[0].resize(static_cast<Eigen::Index>(bsz) * n, EvgnnModel::kInputFeatures);
    for (int b = 0; b < bsz; ++b) {
        check_relaxed(m, cs[b]);
        node_inputs(m, xs[b], f.h[0], b * n);
    }
    for (int l = 0; l < L; ++l) {
        const auto& layer = m.layers[l];
        auto& w = f.edge[l];
        w.resize(bsz, nb);
        for (int b = 0; b < bsz; ++b)
            for (int e = 0; e < nb; ++e) w(b, e) = layer.gain[e] * m.kappa[e] * (1.0 - cs[b][e]);
        aggregate(m, f.h[l], w, f.msg[l]);
        RMat pre = f.h[l] * layer.w_self.transpose() + f.msg[l] * layer.w_nbr.transpose();
        pre.rowwise() += layer.bias.transpose();
        f.h[l + 1] = pre.array().tanh().matrix();
    }
    f.pooled.resize(bsz, m.hyper.hidden);
    for (int b = 0; b < bsz; ++b) f.pooled.row(b) = f.h[L].middleRows(b * n, n).colwise().mean();
    f.y = (f.pooled * m.w_out).array() + m.b_out;
    f.s = f.y.unaryExpr([](double v) { return softplus(v); });
    return f;
}

/// Reverse pass from d loss / d score. Fills the flattened parameter gradient
/// and/or the gradient with respect to each example's relaxation.
void backward(const EvgnnModel& m, const Forward& f, const std::vector<std::span<const double>>& cs,
              const Eigen::VectorXd& ds, std::vector<double>* grad, Eigen::MatrixXd* dc) {
    const int n = m.n_bus, nb = m.n_branch(), bsz = f.batch;
    const int L = static_cast<int>(m.layers.size());
    const Eigen::VectorXd dy = ds.array() * f.y.unaryExpr([](double v) { return sigmoid(v); }).array();

    std::vector<Eigen::MatrixXd> g_ws(L), g_wn(L);
    std::vector<Eigen::VectorXd> g_b(L), g_gain(L);
    if (dc) dc->setZero(bsz, nb);

    RMat dh(static_cast<Eigen::Index>(bsz) * n, m.hyper.hidden);
    for (int b = 0; b < bsz; ++b)
        for (int i = 0; i < n; ++i) dh.row(b * n + i) = (dy(b) / n) * m.w_out.transpose();

    for (int l = L - 1; l >= 0; --l) {
        const auto& layer = m.layers[l];
        const RMat dp = (dh.array() * (1.0 - f.h[l + 1].array().square())).matrix();
        if (grad) {
            g_ws[l] = dp.transpose() * f.h[l];
            g_wn[l] = dp.transpose() * f.msg[l];
            g_b[l] = dp.colwise().sum().transpose();
            g_gain[l] = Eigen::VectorXd::Zero(nb);
        }
        const RMat dmsg = dp * layer.w_nbr;
        for (int b = 0; b < bsz; ++b)
            for (int e = 0; e < nb; ++e) {
                const int i = b * n + m.ends[e].first, j = b * n + m.ends[e].second;
                const double da = dmsg.row(i).dot(f.h[l].row(j)) + dmsg.row(j).dot(f.h[l].row(i));
                if (grad) g_gain[l](e) += da * m.kappa[e] * (1.0 - cs[b][e]);
                if (dc) (*dc)(b, e) -= da * layer.gain[e] * m.kappa[e];
            }
        if (l > 0) {
            RMat back;
            aggregate(m, dmsg, f.edge[l], back);
            dh = dp * layer.w_self + back;
        }
    }

    if (grad) {
        grad->assign(m.parameter_count(), 0.0);
        double* p = grad->data();
        for (int l = 0; l < L; ++l) {
            p = std::copy(g_ws[l].data(), g_ws[l].data() + g_ws[l].size(), p);
            p = std::copy(g_wn[l].data(), g_wn[l].data() + g_wn[l].size(), p);
            p = std::copy(g_b[l].data(), g_b[l].data() + g_b[l].size(), p);
            p = std::copy(g_gain[l].data(), g_gain[l].data() + g_gain[l].size(), p);
        }
        const Eigen::VectorXd g_wout = f.pooled.transpose() * dy;
        p = std::copy(g_wout.data(), g_wout.data() + g_wout.size(), p);
        *p = dy.sum();
    }
}

double quantile_nearest_rank(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
    return v[std::clamp<std::size_t>(idx, 1, v.size()) - 1];
}

}  // namespace

void EvgnnHyper::validate() const {
    if (layers < 1 || hidden < 1) throw ValidationError("surrogate needs at least one layer and one hidden unit");
    if (epochs < 0 || batch_size < 0) throw ValidationError("epochs and batch size must be non-negative");
    if (!(learning_rate > 0.0) || momentum < 0.0 || momentum >= 1.0)
        throw ValidationError("invalid surrogate optimizer settings");
    if (!(clip_quantile > 0.0 && clip_quantile <= 1.0) || !(clip_factor > 0.0))
        throw ValidationError("invalid surrogate label clipping");
}

std::size_t EvgnnModel::parameter_count() const {
    std::size_t count = 0;
    for (const auto& l : layers) count += l.w_self.size() + l.w_nbr.size() + l.bias.size() + l.gain.size();
    return count + w_out.size() + 1;
}

std::vector<double> EvgnnModel::flatten() const {
    std::vector<double> theta;
    theta.reserve(parameter_count());
    auto put = [&](const auto& mat) { theta.insert(theta.end(), mat.data(), mat.data() + mat.size()); };
    for (const auto& l : layers) {
        put(l.w_self);
        put(l.w_nbr);
        put(l.bias);
        put(l.gain);
    }
    put(w_out);
    theta.push_back(b_out);
    return theta;
}

void EvgnnModel::unflatten(std::span<const double> theta) {
    if (theta.size() != parameter_count()) throw ValidationError("parameter vector has the wrong length");
    const double* p = theta.data();
    auto take = [&](auto& mat) {
        std::copy(p, p + mat.size(), mat.data());
        p += mat.size();
    };
    for (auto& l : layers) {
        take(l.w_self);
        take(l.w_nbr);
        take(l.bias);
        take(l.gain);
    }
    take(w_out);
    b_out = *p;
}

bool operator==(const EvgnnModel& a, const EvgnnModel& b) {
    return a.n_bus == b.n_bus && a.ends == b.ends && a.feat_mean == b.feat_mean && a.feat_scale == b.feat_scale &&
           a.target_cap == b.target_cap && a.layers.size() == b.layers.size() && a.flatten() == b.flatten();
}

EvgnnModel make_evgnn(const NetworkCase& net, const EvgnnHyper& hyper, std::uint64_t seed) {
    hyper.validate();
    EvgnnModel m;
    m.hyper = hyper;
    m.n_bus = net.bus_count();
    m.n_gen = net.gen_count();
    const BusBranchGraph graph(net);
    m.ends = graph.endpoints();
    std::vector<int> degree(m.n_bus, 0);
    for (const auto& [i, j] : m.ends) {
        ++degree[i];
        ++degree[j];
    }
    for (const auto& [i, j] : m.ends) m.kappa.push_back(1.0 / std::sqrt(static_cast<double>(degree[i] * degree[j])));
    for (const auto& g : net.generators) m.gen_bus.push_back(net.bus_index(g.bus_id));
    for (const auto& b : net.buses)
        m.bus_type.push_back(b.type == BusType::pq ? 0 : b.type == BusType::pv ? 1 : 2);

    Rng rng = make_rng(seed, {0x65766e6eULL});
    auto fill = [&](Eigen::MatrixXd& w, int out, int in) {
        const double a = std::sqrt(6.0 / (in + out));
        w.resize(out, in);
        for (Eigen::Index c = 0; c < w.cols(); ++c)
            for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = uniform(rng, -a, a);
    };
    for (int l = 0; l < hyper.layers; ++l) {
        EvgnnModel::Layer layer;
        const int in = layer_input_width(m, l);
        fill(layer.w_self, hyper.hidden, in);
        fill(layer.w_nbr, hyper.hidden, in);
        layer.bias = Eigen::VectorXd::Zero(hyper.hidden);
        layer.gain = Eigen::VectorXd::Ones(m.n_branch());
        m.layers.push_back(std::move(layer));
    }
    m.w_out.resize(hyper.hidden);
    const double a = 1.0 / std::sqrt(static_cast<double>(hyper.hidden));
    for (int i = 0; i < hyper.hidden; ++i) m.w_out(i) = uniform(rng, -a, a);
    return m;
}

void check_compatible(const EvgnnModel& model, const NetworkCase& net) {
    if (model.n_bus != net.bus_count() || model.n_gen != net.gen_count() || model.n_branch() != net.branch_count() ||
        model.ends != BusBranchGraph(net).endpoints())
        throw ValidationError("surrogate model was built for a different network topology");
}

double score(const EvgnnModel& model, std::span<const double> x, std::span<const double> c_relaxed) {
    return forward(model, {x}, {c_relaxed}).s(0);
}

double score(const EvgnnModel& model, const NetworkCase& net, std::span<const double> x,
             std::span<const double> c_relaxed) {
    check_compatible(model, net);
    return score(model, x, c_relaxed);
}

std::vector<double> score_batch(const EvgnnModel& model, std::span<const double> x,
                                const std::vector<std::vector<double>>& cs) {
    std::vector<double> out;
    out.reserve(cs.size());
    constexpr std::size_t kChunk = 256;
    for (std::size_t start = 0; start < cs.size(); start += kChunk) {
        const std::size_t end = std::min(cs.size(), start + kChunk);
        std::vector<std::span<const double>> xs(end - start, x), cv;
        for (std::size_t i = start; i < end; ++i) cv.emplace_back(cs[i]);
        const auto f = forward(model, xs, cv);
        out.insert(out.end(), f.s.data(), f.s.data() + f.s.size());
    }
    return out;
}

std::vector<double> score_gradient(const EvgnnModel& model, std::span<const double> x,
                                   std::span<const double> c_relaxed) {
    const std::vector<std::span<const double>> cs = {c_relaxed};
    const auto f = forward(model, {x}, cs);
    Eigen::MatrixXd dc;
    backward(model, f, cs, Eigen::VectorXd::Ones(1), nullptr, &dc);
    return std::vector<double>(dc.data(), dc.data() + dc.size());
}

std::vector<double> score_gradient(const EvgnnModel& model, const NetworkCase& net, std::span<const double> x,
                                   std::span<const double> c_relaxed) {
    check_compatible(model, net);
    return score_gradient(model, x, c_relaxed);
}

double evgnn_target(const EvgnnModel& model, double s) {
    const double capped = model.target_cap > 0.0 ? std::min(s, model.target_cap) : s;
    return std::log1p(std::max(capped, 0.0));
}

double evgnn_loss_gradient(const EvgnnModel& model, const std::vector<const LabeledExample*>& batch,
                           std::vector<double>* grad) {
    if (batch.empty()) throw ValidationError("empty training batch");
    std::vector<std::span<const double>> xs, cs;
    for (const auto* ex : batch) {
        xs.emplace_back(ex->x);
        cs.emplace_back(ex->c);
    }
    const auto f = forward(model, xs, cs);
    const double inv = 1.0 / static_cast<double>(batch.size());
    Eigen::VectorXd ds(batch.size());
    double loss = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const double r = f.s(b) - evgnn_target(model, batch[b]->s);
        loss += r * r * inv;
        ds(b) = 2.0 * r * inv;
    }
    if (grad) backward(model, f, cs, ds, grad, nullptr);
    return loss;
}

EvgnnModel train_evgnn(const NetworkCase& net, const std::vector<LabeledExample>& data, const EvgnnHyper& hyper,
                       std::uint64_t seed) {
    if (data.empty()) throw ValidationError("surrogate training set is empty");
    EvgnnModel m = make_evgnn(net, hyper, seed);

    // node input statistics over every (example, bus)
    std::vector<double> sum(4, 0.0), sq(4, 0.0), raw(4 * static_cast<std::size_t>(m.n_bus));
    std::vector<double> labels;
    for (const auto& ex : data) {
        if (!(ex.s >= 0.0)) throw ValidationError("severity labels must be non-negative");
        check_relaxed(m, ex.c);
        raw_node_inputs(m, ex.x, raw.data());
        for (int i = 0; i < m.n_bus; ++i)
            for (int f = 0; f < 4; ++f) {
                sum[f] += raw[4 * i + f];
                sq[f] += raw[4 * i + f] * raw[4 * i + f];
            }
        labels.push_back(ex.s);
    }
    const double count = static_cast<double>(data.size()) * m.n_bus;
    for (int f = 0; f < 4; ++f) {
        m.feat_mean[f] = sum[f] / count;
        const double var = std::max(0.0, sq[f] / count - m.feat_mean[f] * m.feat_mean[f]);
        m.feat_scale[f] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    m.target_cap = hyper.clip_factor * quantile_nearest_rank(labels, hyper.clip_quantile);
    if (!(m.target_cap > 0.0)) m.target_cap = std::max(1.0, *std::max_element(labels.begin(), labels.end()));

    double mean_target = 0.0;
    for (double s : labels) mean_target += evgnn_target(m, s) / static_cast<double>(labels.size());
    if (mean_target > 1e-6) m.b_out = inverse_softplus(mean_target);

    const std::size_t n = data.size();
    const std::size_t bsz = hyper.batch_size == 0 ? n : std::min<std::size_t>(hyper.batch_size, n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> theta = m.flatten(), velocity(theta.size(), 0.0), grad;
    std::vector<const LabeledExample*> batch;

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        if (bsz < n) {
            Rng rng = make_rng(seed, {0x7368756eULL, static_cast<std::uint64_t>(epoch)});
            for (std::size_t i = n - 1; i > 0; --i)
                std::swap(order[i], order[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(i)))]);
        }
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += bsz) {
            const std::size_t end = std::min(n, start + bsz);
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(&data[order[i]]);
            const double loss = evgnn_loss_gradient(m, batch, &grad);
            if (!std::isfinite(loss)) throw TrainingError("surrogate loss became non-finite at epoch " + std::to_string(epoch));
            epoch_loss += loss * static_cast<double>(end - start) / static_cast<double>(n);
            for (std::size_t p = 0; p < theta.size(); ++p) {
                velocity[p] = hyper.momentum * velocity[p] - hyper.learning_rate * grad[p];
                theta[p] += velocity[p];
            }
            m.unflatten(theta);
        }
        m.loss_history.push_back(epoch_loss);
    }
    for (double t : theta)
        if (!std::isfinite(t)) throw TrainingError("surrogate parameters became non-finite");

    // loss of the final parameters over the whole set
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += 256) {
        const std::size_t end = std::min(n, start + 256);
        batch.clear();
        for (std::size_t i = start; i < end; ++i) batch.push_back(&data[i]);
        total += evgnn_loss_gradient(m, batch, nullptr) * static_cast<double>(end - start);
    }
    m.final_loss = total / static_cast<double>(n);
    return m;
}

std::vector<HighRiskEntry> build_high_risk_set(const EvgnnModel& model, const FeasibleSetSpec& spec,
                                               const std::vector<std::vector<double>>& states, KRange range,
                                               int pool, int retain, std::uint64_t seed) {
    if (pool < 0 || retain < 0 || retain > pool) throw ValidationError("retain must lie in [0, pool]");
    check_compatible(model, spec.network());
    std::vector<HighRiskEntry> out;
    for (std::size_t s = 0; s < states.size(); ++s) {
        Rng rng = make_rng(seed, {static_cast<std::uint64_t>(s)});
        std::vector<ContingencyVector> drawn;
        std::vector<std::vector<double>> relaxed;
        for (int i = 0; i < pool; ++i) {
            drawn.push_back(uniform_sample(spec, range, rng));
            relaxed.push_back(drawn.back().relaxed());
        }
        const auto scores = score_batch(model, states[s], relaxed);
        std::vector<int> idx(pool);
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return scores[a] > scores[b]; });
        for (int r = 0; r < retain; ++r) out.push_back({s, drawn[idx[r]], scores[idx[r]]});
    }
    return out;
}

}  // namespace nkscreen

#include "nkscreen/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "nkscreen/errors.hpp"
#include "nkscreen/parallel.hpp"
#include "nkscreen/rng.hpp"

namespace nkscreen {

namespace {

using Mat = Eigen::MatrixXd;

struct DenoiseForward {
    Mat x;                    // B x F normalized states
    std::vector<Mat> enc;     // encoder activations
    Mat z;                    // B x (N + time_dim + state_hidden)
    std::vector<Mat> trunk;   // trunk activations
    Mat out;                  // B x N
};

Mat dense_tanh(const Mat& in, const DenoiserModel::Dense& d) {
    Mat pre = in * d.w.transpose();
    pre.rowwise() += d.b.transpose();
    return pre.array().tanh().matrix();
}

/// Rows b of cs, xs and ts form one input.
DenoiseForward denoise_forward(const DenoiserModel& m, const std::vector<std::span<const double>>& cs,
                               const std::vector<std::span<const double>>& xs, const std::vector<int>& ts) {
    const auto bsz = static_cast<Eigen::Index>(cs.size());
    const int n = m.n_branch, tdim = m.hyper.time_dim;
    DenoiseForward f;
    f.x.resize(bsz, m.n_features);
    for (Eigen::Index b = 0; b < bsz; ++b) {
        if (static_cast<int>(xs[b].size()) != m.n_features) throw ValidationError("state feature vector has the wrong length");
        if (static_cast<int>(cs[b].size()) != n) throw ValidationError("diffusion state has the wrong length");
        for (int j = 0; j < m.n_features; ++j) f.x(b, j) = 2.0 * (xs[b][j] - m.x_min[j]) / m.x_range[j] - 1.0;
    }
    const Mat* in = &f.x;
    for (const auto& d : m.encoder) {
        f.enc.push_back(dense_tanh(*in, d));
        in = &f.enc.back();
    }
    f.z.resize(bsz, n + tdim + m.hyper.state_hidden);
    for (Eigen::Index b = 0; b < bsz; ++b) {
        for (int j = 0; j < n; ++j) f.z(b, j) = cs[b][j];
        const auto te = time_embedding(ts[b], tdim);
        for (int j = 0; j < tdim; ++j) f.z(b, n + j) = te[j];
    }
    f.z.rightCols(m.hyper.state_hidden) = f.enc.back();
    in = &f.z;
    for (const auto& d : m.trunk) {
        f.trunk.push_back(dense_tanh(*in, d));
        in = &f.trunk.back();
    }
    f.out = *in * m.head.w.transpose();
    f.out.rowwise() += m.head.b.transpose();
    return f;
}

void denoise_backward(const DenoiserModel& m, const DenoiseForward& f, const Mat& dout, std::vector<double>& grad) {
    std::vector<Mat> gw_enc(m.encoder.size()), gw_trunk(m.trunk.size());
    std::vector<Eigen::VectorXd> gb_enc(m.encoder.size()), gb_trunk(m.trunk.size());

    const Mat g_head_w = dout.transpose() * f.trunk.back();
    const Eigen::VectorXd g_head_b = dout.colwise().sum().transpose();
    Mat da = dout * m.head.w;
    for (int l = static_cast<int>(m.trunk.size()) - 1; l >= 0; --l) {
        const Mat dp = (da.array() * (1.0 - f.trunk[l].array().square())).matrix();
        const Mat& in = l == 0 ? f.z : f.trunk[l - 1];
        gw_trunk[l] = dp.transpose() * in;
        gb_trunk[l] = dp.colwise().sum().transpose();
        da = dp * m.trunk[l].w;
    }
    Mat de = da.rightCols(m.hyper.state_hidden);
    for (int l = static_cast<int>(m.encoder.size()) - 1; l >= 0; --l) {
        const Mat dp = (de.array() * (1.0 - f.enc[l].array().square())).matrix();
        const Mat& in = l == 0 ? f.x : f.enc[l - 1];
        gw_enc[l] = dp.transpose() * in;
        gb_enc[l] = dp.colwise().sum().transpose();
        if (l > 0) de = dp * m.encoder[l].w;
    }

    grad.assign(m.parameter_count(), 0.0);
    double* p = grad.data();
    auto put = [&](const auto& mat) { p = std::copy(mat.data(), mat.data() + mat.size(), p); };
    for (std::size_t l = 0; l < m.encoder.size(); ++l) {
        put(gw_enc[l]);
        put(gb_enc[l]);
    }
    for (std::size_t l = 0; l < m.trunk.size(); ++l) {
        put(gw_trunk[l]);
        put(gb_trunk[l]);
    }
    put(g_head_w);
    put(g_head_b);
}

/// Noise draws for one training batch, shared by the loss and its gradient.
struct NoisyBatch {
    std::vector<int> ts;
    std::vector<std::vector<double>> eps, ct;
};

NoisyBatch draw_noise(const NoiseSchedule& sched, const std::vector<const DiffusionExample*>& batch, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    NoisyBatch nb;
    for (const auto* ex : batch) {
        const int t = uniform_int(rng, 1, sched.T);
        std::vector<double> eps(ex->c0.n());
        for (auto& e : eps) e = standard_normal(rng);
        nb.ct.push_back(forward_sample(embed_pattern(ex->c0), t, eps, sched));
        nb.ts.push_back(t);
        nb.eps.push_back(std::move(eps));
    }
    return nb;
}

void check_weight_monotone(const std::vector<const DiffusionExample*>& batch, const WeightFn& weight_fn) {
    std::vector<double> s;
    for (const auto* ex : batch) s.push_back(ex->s);
    std::sort(s.begin(), s.end());
    for (std::size_t i = 1; i < s.size(); ++i)
        if (weight_fn(s[i]) < weight_fn(s[i - 1])) throw ValidationError("severity weight must be nondecreasing");
}

std::vector<const DiffusionExample*> pointers(const std::vector<DiffusionExample>& batch) {
    std::vector<const DiffusionExample*> out;
    for (const auto& ex : batch) out.push_back(&ex);
    return out;
}

}  // namespace

NoiseSchedule make_schedule(int T, double beta_lo, double beta_hi, double terminal_limit) {
    if (T < 1) throw ValidationError("schedule needs at least one step");
    if (!(beta_lo > 0.0) || beta_lo > beta_hi || !(beta_hi < 1.0))
        throw ValidationError("schedule requires 0 < beta_lo <= beta_hi < 1");
    NoiseSchedule s;
    s.T = T;
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double beta = T == 1 ? beta_lo : beta_lo + (beta_hi - beta_lo) * (t - 1) / (T - 1);
        const double prev = prod;
        prod *= 1.0 - beta;
        s.beta.push_back(beta);
        s.alpha_bar.push_back(prod);
        s.tilde_beta.push_back(t == 1 ? 0.0 : (1.0 - prev) / (1.0 - prod) * beta);
    }
    if (!(s.alpha_bar.back() < terminal_limit))
        throw ValidationError("schedule too short: alpha_bar_T = " + std::to_string(s.alpha_bar.back()) +
                              " is not below " + std::to_string(terminal_limit));
    return s;
}

std::vector<double> forward_sample(std::span<const double> c0, int t, std::span<const double> eps,
                                   const NoiseSchedule& sched) {
    if (t < 1 || t > sched.T) throw ValidationError("diffusion step out of range");
    if (c0.size() != eps.size()) throw ValidationError("noise and pattern lengths differ");
    const double a = std::sqrt(sched.alpha_bar_at(t)), b = std::sqrt(1.0 - sched.alpha_bar_at(t));
    std::vector<double> out(c0.size());
    for (std::size_t i = 0; i < c0.size(); ++i) out[i] = a * c0[i] + b * eps[i];
    return out;
}

std::vector<double> embed_pattern(const ContingencyVector& c) {
    std::vector<double> v(c.n(), -1.0);
    for (int e : c.outaged()) v[e] = 1.0;
    return v;
}

void DenoiserHyper::validate() const {
    if (state_hidden < 1 || time_dim < 2 || time_dim % 2 != 0 || trunk_hidden < 1 || trunk_layers < 1)
        throw ValidationError("invalid denoiser architecture");
    if (epochs < 0 || batch_size < 1 || !(learning_rate > 0.0)) throw ValidationError("invalid denoiser optimizer settings");
}

std::vector<double> time_embedding(int t, int dim) {
    std::vector<double> e(dim);
    const int half = dim / 2;
    for (int k = 0; k < half; ++k) {
        const double freq = std::pow(10000.0, -static_cast<double>(k) / half);
        e[k] = std::sin(t * freq);
        e[half + k] = std::cos(t * freq);
    }
    return e;
}

std::size_t DenoiserModel::parameter_count() const {
    std::size_t count = head.w.size() + head.b.size();
    for (const auto& d : encoder) count += d.w.size() + d.b.size();
    for (const auto& d : trunk) count += d.w.size() + d.b.size();
    return count;
}

std::vector<double> DenoiserModel::flatten() const {
    std::vector<double> theta;
    theta.reserve(parameter_count());
    auto put = [&](const auto& mat) { theta.insert(theta.end(), mat.data(), mat.data() + mat.size()); };
    for (const auto& d : encoder) {
        put(d.w);
        put(d.b);
    }
    for (const auto& d : trunk) {
        put(d.w);
        put(d.b);
    }
    put(head.w);
    put(head.b);
    return theta;
}

void DenoiserModel::unflatten(std::span<const double> theta) {
    if (theta.size() != parameter_count()) throw ValidationError("parameter vector has the wrong length");
    const double* p = theta.data();
    auto take = [&](auto& mat) {
        std::copy(p, p + mat.size(), mat.data());
        p += mat.size();
    };
    for (auto& d : encoder) {
        take(d.w);
        take(d.b);
    }
    for (auto& d : trunk) {
        take(d.w);
        take(d.b);
    }
    take(head.w);
    take(head.b);
}

bool operator==(const DenoiserModel& a, const DenoiserModel& b) {
    return a.n_branch == b.n_branch && a.n_features == b.n_features && a.x_min == b.x_min && a.x_range == b.x_range &&
           a.encoder.size() == b.encoder.size() && a.trunk.size() == b.trunk.size() && a.flatten() == b.flatten();
}

std::vector<double> DenoiserModel::predict(std::span<const double> c_t, std::span<const double> x, int t) const {
    const auto f = denoise_forward(*this, {c_t}, {x}, {t});
    return std::vector<double>(f.out.data(), f.out.data() + f.out.size());
}

DenoiserModel make_denoiser(int n_branch, int n_features, const DenoiserHyper& hyper, std::uint64_t seed) {
    hyper.validate();
    if (n_branch < 1 || n_features < 1) throw ValidationError("denoiser dimensions must be positive");
    DenoiserModel m;
    m.hyper = hyper;
    m.n_branch = n_branch;
    m.n_features = n_features;
    m.x_min.assign(n_features, 0.0);
    m.x_range.assign(n_features, 2.0);  // identity-like map of [-1, 1] until fitted

    Rng rng = make_rng(seed, {0x64656e6fULL});
    auto make = [&](int out, int in, double gain) {
        DenoiserModel::Dense d;
        const double a = gain * std::sqrt(6.0 / (in + out));
        d.w.resize(out, in);
        for (Eigen::Index c = 0; c < d.w.cols(); ++c)
            for (Eigen::Index r = 0; r < d.w.rows(); ++r) d.w(r, c) = uniform(rng, -a, a);
        d.b = Eigen::VectorXd::Zero(out);
        return d;
    };
    m.encoder.push_back(make(hyper.state_hidden, n_features, 1.0));
    m.encoder.push_back(make(hyper.state_hidden, hyper.state_hidden, 1.0));
    int in = n_branch + hyper.time_dim + hyper.state_hidden;
    for (int l = 0; l < hyper.trunk_layers; ++l) {
        m.trunk.push_back(make(hyper.trunk_hidden, in, 1.0));
        in = hyper.trunk_hidden;
    }
    m.head = make(n_branch, in, 1.0);
    return m;
}

void check_weight_monotone(const std::vector<DiffusionExample>& batch, const WeightFn& weight_fn) {
    check_weight_monotone(pointers(batch), weight_fn);
}

double diffusion_loss(const EpsPredictor& predictor, const NoiseSchedule& sched,
                      const std::vector<DiffusionExample>& batch, const WeightFn& weight_fn, std::uint64_t seed) {
    if (batch.empty()) throw ValidationError("empty diffusion batch");
    const auto ptrs = pointers(batch);
    check_weight_monotone(ptrs, weight_fn);
    const auto noise = draw_noise(sched, ptrs, seed);
    double loss = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto eps_hat = predictor(noise.ct[i], batch[i].x, noise.ts[i]);
        if (eps_hat.size() != noise.eps[i].size()) throw ValidationError("predictor output has the wrong length");
        double sq = 0.0;
        for (std::size_t j = 0; j < eps_hat.size(); ++j) sq += (noise.eps[i][j] - eps_hat[j]) * (noise.eps[i][j] - eps_hat[j]);
        loss += weight_fn(batch[i].s) * sq;
    }
    loss /= static_cast<double>(batch.size());
    if (!std::isfinite(loss)) throw TrainingError("diffusion loss is not finite");
    return loss;
}

double diffusion_loss(const DenoiserModel& model, const NoiseSchedule& sched,
                      const std::vector<DiffusionExample>& batch, const WeightFn& weight_fn, std::uint64_t seed) {
    if (batch.empty()) throw ValidationError("empty diffusion batch");
    check_weight_monotone(pointers(batch), weight_fn);
    return denoiser_loss_gradient(model, sched, pointers(batch), weight_fn, seed, nullptr);
}

double denoiser_loss_gradient(const DenoiserModel& model, const NoiseSchedule& sched,
                              const std::vector<const DiffusionExample*>& batch, const WeightFn& weight_fn,
                              std::uint64_t seed, std::vector<double>* grad) {
    if (batch.empty()) throw ValidationError("empty diffusion batch");
    const auto noise = draw_noise(sched, batch, seed);
    std::vector<std::span<const double>> cs, xs;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        cs.emplace_back(noise.ct[i]);
        xs.emplace_back(batch[i]->x);
    }
    const auto f = denoise_forward(model, cs, xs, noise.ts);
    const double inv = 1.0 / static_cast<double>(batch.size());
    Mat dout(f.out.rows(), f.out.cols());
    double loss = 0.0;
    for (Eigen::Index b = 0; b < f.out.rows(); ++b) {
        const double w = weight_fn(batch[b]->s);
        for (Eigen::Index j = 0; j < f.out.cols(); ++j) {
            const double r = noise.eps[b][j] - f.out(b, j);
            loss += w * r * r * inv;
            dout(b, j) = -2.0 * w * r * inv;
        }
    }
    if (!std::isfinite(loss)) throw TrainingError("diffusion loss is not finite");
    if (grad) denoise_backward(model, f, dout, *grad);
    return loss;
}

DenoiserModel train_denoiser(const std::vector<DiffusionExample>& data, const NoiseSchedule& sched,
                             const DenoiserHyper& hyper, const WeightFn& weight_fn, std::uint64_t seed) {
    if (data.empty()) throw ValidationError("generator training set is empty");
    const int n_features = static_cast<int>(data.front().x.size());
    DenoiserModel m = make_denoiser(data.front().c0.n(), n_features, hyper, seed);
    const auto all = pointers(data);
    check_weight_monotone(all, weight_fn);

    std::vector<double> lo(n_features, INFINITY), hi(n_features, -INFINITY);
    for (const auto& ex : data) {
        if (static_cast<int>(ex.x.size()) != n_features || ex.c0.n() != m.n_branch)
            throw ValidationError("generator training examples have inconsistent dimensions");
        for (int j = 0; j < n_features; ++j) {
            lo[j] = std::min(lo[j], ex.x[j]);
            hi[j] = std::max(hi[j], ex.x[j]);
        }
    }
    for (int j = 0; j < n_features; ++j) {
        m.x_min[j] = lo[j];
        m.x_range[j] = hi[j] - lo[j] > 1e-12 ? hi[j] - lo[j] : 1.0;
    }

    const std::size_t n = data.size(), bsz = std::min<std::size_t>(hyper.batch_size, n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> theta = m.flatten(), mom(theta.size(), 0.0), var(theta.size(), 0.0), grad;
    const double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;
    long step = 0;
    std::vector<const DiffusionExample*> batch;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        Rng shuffle = make_rng(seed, {0x7368756eULL, static_cast<std::uint64_t>(epoch)});
        for (std::size_t i = n - 1; i > 0; --i)
            std::swap(order[i], order[static_cast<std::size_t>(uniform_int(shuffle, 0, static_cast<int>(i)))]);
        double epoch_loss = 0.0;
        std::uint64_t batch_index = 0;
        for (std::size_t start = 0; start < n; start += bsz, ++batch_index) {
            const std::size_t end = std::min(n, start + bsz);
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(&data[order[i]]);
            const double loss = denoiser_loss_gradient(
                m, sched, batch, weight_fn, derive_seed(seed, {static_cast<std::uint64_t>(epoch), batch_index}), &grad);
            epoch_loss += loss * static_cast<double>(end - start) / static_cast<double>(n);
            ++step;
            const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
            for (std::size_t p = 0; p < theta.size(); ++p) {
                mom[p] = b1 * mom[p] + (1.0 - b1) * grad[p];
                var[p] = b2 * var[p] + (1.0 - b2) * grad[p] * grad[p];
                theta[p] -= hyper.learning_rate * (mom[p] / c1) / (std::sqrt(var[p] / c2) + adam_eps);
            }
            m.unflatten(theta);
        }
        if (!std::isfinite(epoch_loss)) throw TrainingError("generator loss became non-finite at epoch " + std::to_string(epoch));
        m.loss_history.push_back(epoch_loss);
    }
    return m;
}

void GuidanceConfig::validate() const {
    if (!(lambda >= 0.0)) throw ValidationError("guidance strength must be non-negative");
    if (!(clip > 0.0) || !(sharpness > 0.0)) throw ValidationError("guidance clip and sharpness must be positive");
}

std::vector<double> reverse_sample(const EpsPredictor& predictor, int n_branch, const NoiseSchedule& sched,
                                   std::span<const double> x, const EvgnnModel* surrogate,
                                   const GuidanceConfig& guidance, std::uint64_t seed) {
    guidance.validate();
    if (n_branch < 1) throw ValidationError("sample dimension must be positive");
    if (surrogate && surrogate->n_branch() != n_branch)
        throw ValidationError("surrogate and generator disagree on the branch count");
    Rng rng = make_rng(seed);
    const bool guided = surrogate != nullptr && guidance.lambda > 0.0;
    const auto n = static_cast<std::size_t>(n_branch);
    std::vector<double> c(n);
    for (auto& v : c) v = standard_normal(rng);
    for (int t = sched.T; t >= 1; --t) {
        const auto eps_hat = predictor(c, x, t);
        if (eps_hat.size() != n) throw ValidationError("predictor output has the wrong length");
        const double beta = sched.beta_at(t);
        const double k_eps = beta / std::sqrt(1.0 - sched.alpha_bar_at(t));
        const double k_scale = 1.0 / std::sqrt(1.0 - beta);
        std::vector<double> mean(n);
        for (std::size_t j = 0; j < n; ++j) mean[j] = (c[j] - k_eps * eps_hat[j]) * k_scale;

        if (guided && t <= guidance.start_step) {
            std::vector<double> u(n);
            for (std::size_t j = 0; j < n; ++j)
                u[j] = 1.0 / (1.0 + std::exp(-guidance.sharpness * std::clamp(c[j], -guidance.clip, guidance.clip)));
            const auto g = score_gradient(*surrogate, x, u);
            for (std::size_t j = 0; j < n; ++j) {
                const double inside = std::abs(c[j]) < guidance.clip ? 1.0 : 0.0;
                mean[j] += guidance.lambda * g[j] * guidance.sharpness * u[j] * (1.0 - u[j]) * inside;
            }
        }
        const double sigma = t > 1 ? std::sqrt(sched.tilde_beta_at(t)) : 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            c[j] = mean[j] + (t > 1 ? sigma * standard_normal(rng) : 0.0);
            if (!std::isfinite(c[j])) throw SamplingError(t, "reverse diffusion state became non-finite");
        }
    }
    return c;
}

std::vector<double> reverse_sample(const DenoiserModel& model, const NoiseSchedule& sched, std::span<const double> x,
                                   const EvgnnModel* surrogate, const GuidanceConfig& guidance, std::uint64_t seed) {
    const EpsPredictor predictor = [&](std::span<const double> c, std::span<const double> xs, int t) {
        return model.predict(c, xs, t);
    };
    return reverse_sample(predictor, model.n_branch, sched, x, surrogate, guidance, seed);
}

int draw_k(KRange range, std::uint64_t seed, std::size_t sample_index) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(sample_index), 0x6bULL});
    return uniform_int(rng, range.k_min, range.k_max);
}

std::vector<ContingencyVector> generate(const DenoiserModel& model, const EvgnnModel* surrogate,
                                        const NoiseSchedule& sched, std::span<const double> x,
                                        const FeasibleSetSpec& spec, int m, const GuidanceConfig& guidance,
                                        const GenerateOptions& options, std::uint64_t seed) {
    if (m < 1) throw ValidationError("generate needs m >= 1");
    if (model.n_branch != spec.n()) throw ValidationError("generator and case disagree on the branch count");
    const KRange range = options.k_range;
    if (range.k_min < 1 || range.k_max < range.k_min || range.k_max > spec.n()) throw ValidationError("invalid k range");

    auto one = [&](std::size_t i) {
        const int k = draw_k(range, seed, i);
        const auto raw = reverse_sample(model, sched, x, surrogate, guidance, derive_seed(seed, {static_cast<std::uint64_t>(i)}));
        return project(raw, spec.with_k(k), i);
    };

    std::vector<ContingencyVector> out;
    if (!options.dedup) {
        out.resize(m);
        parallel_for(static_cast<std::size_t>(m), options.parallelism, [&](std::size_t i) { out[i] = one(i); });
        return out;
    }
    std::set<ContingencyVector> seen;
    std::size_t next = 0;
    const std::size_t cap = 10 * static_cast<std::size_t>(m);
    while (static_cast<int>(out.size()) < m && next < cap) {
        const std::size_t round = std::min(cap - next, static_cast<std::size_t>(m) - out.size());
        std::vector<ContingencyVector> batch(round);
        parallel_for(round, options.parallelism, [&](std::size_t r) { batch[r] = one(next + r); });
        next += round;
        for (auto& c : batch)
            if (static_cast<int>(out.size()) < m && seen.insert(c).second) out.push_back(std::move(c));
    }
    return out;
}

}  // namespace nkscreen

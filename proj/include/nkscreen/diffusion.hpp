#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "nkscreen/contingency.hpp"
#include "nkscreen/surrogate.hpp"

namespace nkscreen {

struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;        ///< beta[t-1] = beta_t
    std::vector<double> alpha_bar;   ///< alpha_bar[t-1]
    std::vector<double> tilde_beta;  ///< posterior variance, tilde_beta[0] = 0

    double beta_at(int t) const { return beta[t - 1]; }
    double alpha_bar_at(int t) const { return alpha_bar[t - 1]; }
    double tilde_beta_at(int t) const { return tilde_beta[t - 1]; }
};

inline constexpr double kTerminalAlphaBarLimit = 0.01;

/// Linear betas from beta_lo to beta_hi. Throws ValidationError when
/// alpha_bar_T is not below terminal_limit (pass 1.0 to allow short schedules).
NoiseSchedule make_schedule(int T, double beta_lo, double beta_hi, double terminal_limit = kTerminalAlphaBarLimit);

/// c_t = sqrt(alpha_bar_t) c0 + sqrt(1 - alpha_bar_t) eps.
std::vector<double> forward_sample(std::span<const double> c0, int t, std::span<const double> eps,
                                   const NoiseSchedule& sched);

/// Nondecreasing severity weight w(s) = 1 + gamma [s >= tau].
struct SeverityWeight {
    double tau = 1.0;
    double gamma = 4.0;
    double operator()(double s) const { return 1.0 + (s >= tau ? gamma : 0.0); }
};

using WeightFn = std::function<double(double)>;

/// Training pattern for the generator: state features, binary pattern, severity.
struct DiffusionExample {
    std::vector<double> x;
    ContingencyVector c0;
    double s = 0.0;
};

/// Binary pattern mapped to {-1, +1}.
std::vector<double> embed_pattern(const ContingencyVector& c);

/// eps_hat = f(c_t, x, t).
using EpsPredictor = std::function<std::vector<double>(std::span<const double>, std::span<const double>, int)>;

struct DenoiserHyper {
    int state_hidden = 64;
    int time_dim = 32;
    int trunk_hidden = 128;
    int trunk_layers = 2;
    int epochs = 200;
    int batch_size = 64;
    double learning_rate = 1e-3;

    void validate() const;
};

/// eps_theta(c_t, x, t): a two-layer state encoder and a fixed sinusoidal time
/// embedding concatenated with c_t, followed by a tanh trunk and a linear head.
struct DenoiserModel {
    struct Dense {
        Eigen::MatrixXd w;  ///< out x in
        Eigen::VectorXd b;
    };

    DenoiserHyper hyper;
    int n_branch = 0;
    int n_features = 0;
    std::vector<double> x_min, x_range;  ///< min-max normalization of the state features
    std::vector<Dense> encoder;          ///< tanh layers
    std::vector<Dense> trunk;            ///< tanh layers
    Dense head;                          ///< linear

    std::vector<double> loss_history;

    std::size_t parameter_count() const;
    std::vector<double> flatten() const;
    void unflatten(std::span<const double> theta);
    std::vector<double> predict(std::span<const double> c_t, std::span<const double> x, int t) const;
    friend bool operator==(const DenoiserModel&, const DenoiserModel&);
};

std::vector<double> time_embedding(int t, int dim);

DenoiserModel make_denoiser(int n_branch, int n_features, const DenoiserHyper& hyper, std::uint64_t seed);

/// Throws ValidationError unless weight_fn is nondecreasing over the batch labels.
void check_weight_monotone(const std::vector<DiffusionExample>& batch, const WeightFn& weight_fn);

/// Mean over the batch of w(s) ||eps - eps_hat(c_t, x, t)||^2. Element i draws
/// t uniform in [1, T] and then N standard normals, in batch order, from make_rng(seed).
double diffusion_loss(const EpsPredictor& predictor, const NoiseSchedule& sched,
                      const std::vector<DiffusionExample>& batch, const WeightFn& weight_fn, std::uint64_t seed);
double diffusion_loss(const DenoiserModel& model, const NoiseSchedule& sched,
                      const std::vector<DiffusionExample>& batch, const WeightFn& weight_fn, std::uint64_t seed);

/// Same loss with the gradient with respect to flatten().
double denoiser_loss_gradient(const DenoiserModel& model, const NoiseSchedule& sched,
                              const std::vector<const DiffusionExample*>& batch, const WeightFn& weight_fn,
                              std::uint64_t seed, std::vector<double>* grad);

/// Adam on the weighted loss with fresh noise every step. Fits the state normalization.
DenoiserModel train_denoiser(const std::vector<DiffusionExample>& data, const NoiseSchedule& sched,
                             const DenoiserHyper& hyper, const WeightFn& weight_fn, std::uint64_t seed);

struct GuidanceConfig {
    double lambda = 0.0;
    int start_step = 100;     ///< guidance applies for t <= start_step
    double clip = 3.0;        ///< c_t clipped to [-clip, clip] before the sigmoid
    double sharpness = 2.0;   ///< sigmoid slope mapping the clipped state into [0, 1]

    void validate() const;
};

/// Ancestral sampling from c_T ~ N(0, I), adding lambda grad S_hat to each
/// reverse mean when a surrogate is given.
std::vector<double> reverse_sample(const EpsPredictor& predictor, int n_branch, const NoiseSchedule& sched,
                                   std::span<const double> x, const EvgnnModel* surrogate,
                                   const GuidanceConfig& guidance, std::uint64_t seed);
std::vector<double> reverse_sample(const DenoiserModel& model, const NoiseSchedule& sched, std::span<const double> x,
                                   const EvgnnModel* surrogate, const GuidanceConfig& guidance, std::uint64_t seed);

struct GenerateOptions {
    KRange k_range{2, 2};
    bool dedup = false;
    int parallelism = 1;
};

/// Target weight of sample i, uniform over the range.
int draw_k(KRange range, std::uint64_t seed, std::size_t sample_index);

/// m reverse samples projected onto feasible patterns. Sample i uses seed
/// derive_seed(seed, {i}); its k is uniform over the range. With dedup,
/// extra samples are drawn (up to 10 m in total) until m distinct patterns exist.
std::vector<ContingencyVector> generate(const DenoiserModel& model, const EvgnnModel* surrogate,
                                        const NoiseSchedule& sched, std::span<const double> x,
                                        const FeasibleSetSpec& spec, int m, const GuidanceConfig& guidance,
                                        const GenerateOptions& options, std::uint64_t seed);

}  // namespace nkscreen

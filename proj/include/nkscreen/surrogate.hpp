#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "nkscreen/contingency.hpp"
#include "nkscreen/grid_model.hpp"

namespace nkscreen {

struct EvgnnHyper {
    int layers = 3;
    int hidden = 32;
    int epochs = 500;
    double learning_rate = 0.01;
    double momentum = 0.9;
    int batch_size = 64;  ///< 0 means full batch
    /// Labels are capped at clip_factor times their clip_quantile before the log1p transform.
    double clip_quantile = 0.9;
    double clip_factor = 2.0;

    void validate() const;
};

/// One training example: state features, relaxed contingency and severity label.
struct LabeledExample {
    std::vector<double> x;
    std::vector<double> c;
    double s = 0.0;
};

/// Edge-varying message-passing network over the bus-branch graph of one case.
/// score() estimates log(1 + severity).
struct EvgnnModel {
    static constexpr int kInputFeatures = 7;  ///< P load, Q load, P gen, V set, bus type one-hot

    struct Layer {
        Eigen::MatrixXd w_self;  ///< out x in
        Eigen::MatrixXd w_nbr;   ///< out x in
        Eigen::VectorXd bias;
        Eigen::VectorXd gain;  ///< one per branch
    };

    EvgnnHyper hyper;

    // topology, fixed by the case
    int n_bus = 0;
    int n_gen = 0;
    std::vector<std::pair<int, int>> ends;
    std::vector<double> kappa;  ///< 1 / sqrt(deg_i deg_j)
    std::vector<int> gen_bus;
    std::vector<int> bus_type;  ///< 0 pq, 1 pv, 2 slack

    // normalization of the four continuous node inputs
    std::vector<double> feat_mean = {0, 0, 0, 0};
    std::vector<double> feat_scale = {1, 1, 1, 1};
    double target_cap = 0.0;  ///< 0 until trained

    std::vector<Layer> layers;
    Eigen::VectorXd w_out;
    double b_out = 0.0;

    double final_loss = 0.0;
    std::vector<double> loss_history;

    int n_branch() const { return static_cast<int>(ends.size()); }
    std::size_t parameter_count() const;
    std::vector<double> flatten() const;
    void unflatten(std::span<const double> theta);
    friend bool operator==(const EvgnnModel&, const EvgnnModel&);
};

/// Untrained model with seeded weights, unit edge gains.
EvgnnModel make_evgnn(const NetworkCase& net, const EvgnnHyper& hyper, std::uint64_t seed);

/// Throws ValidationError if the model was built for a different topology.
void check_compatible(const EvgnnModel& model, const NetworkCase& net);

double score(const EvgnnModel& model, std::span<const double> x, std::span<const double> c_relaxed);
double score(const EvgnnModel& model, const NetworkCase& net, std::span<const double> x,
             std::span<const double> c_relaxed);
/// Scores many contingencies under one state in a single batched pass.
std::vector<double> score_batch(const EvgnnModel& model, std::span<const double> x,
                                const std::vector<std::vector<double>>& cs);
/// d score / d c_relaxed.
std::vector<double> score_gradient(const EvgnnModel& model, std::span<const double> x,
                                   std::span<const double> c_relaxed);
std::vector<double> score_gradient(const EvgnnModel& model, const NetworkCase& net, std::span<const double> x,
                                   std::span<const double> c_relaxed);

/// Training target for a severity label under the model's cap.
double evgnn_target(const EvgnnModel& model, double s);

/// Mean squared error of the batch and its gradient with respect to flatten().
double evgnn_loss_gradient(const EvgnnModel& model, const std::vector<const LabeledExample*>& batch,
                           std::vector<double>* grad);

/// Fits normalization statistics and the label cap, then runs momentum gradient descent.
EvgnnModel train_evgnn(const NetworkCase& net, const std::vector<LabeledExample>& data, const EvgnnHyper& hyper,
                       std::uint64_t seed);

struct HighRiskEntry {
    std::size_t state_index = 0;
    ContingencyVector c;
    double score = 0.0;
};

/// Per state: draw pool feasible patterns with k uniform in the range, keep the
/// retain highest scoring (ties keep draw order).
std::vector<HighRiskEntry> build_high_risk_set(const EvgnnModel& model, const FeasibleSetSpec& spec,
                                               const std::vector<std::vector<double>>& states, KRange range,
                                               int pool, int retain, std::uint64_t seed);

}  // namespace nkscreen

#pragma once

#include <complex>
#include <limits>
#include <vector>

#include "nkscreen/contingency_vector.hpp"
#include "nkscreen/grid_model.hpp"

namespace nkscreen {

struct SolverOptions {
    double tolerance = 1e-8;  ///< infinity-norm mismatch, pu
    int max_iterations = 30;
    bool enforce_q_limits = true;
    int max_q_rounds = 10;  ///< PV<->PQ switching rounds
};

struct PowerFlowSolution {
    std::vector<double> v_mag;        ///< pu
    std::vector<double> v_ang;        ///< rad
    std::vector<double> branch_p_mw;  ///< from-end active flow, 0 for outaged or out-of-service branches
    bool converged = false;
    int iterations = 0;  ///< Newton passes (mismatch evaluations), summed over Q-limit rounds
    double max_mismatch = std::numeric_limits<double>::infinity();
    std::vector<double> q_gen_mvar;  ///< reactive injection by generators per bus (converged solutions)

    friend bool operator==(const PowerFlowSolution&, const PowerFlowSolution&) = default;
};

/// A case with a state applied, compiled once for repeated contingency solves.
/// Immutable; safe to share between threads.
class PreparedNetwork {
  public:
    struct BranchAdmittance {
        int from;
        int to;
        std::complex<double> yff, yft, ytf, ytt;
    };

    explicit PreparedNetwork(const NetworkCase& applied_case);
    PreparedNetwork(const NetworkCase& net, const OperatingState& state);

    const NetworkCase& network() const noexcept { return net_; }
    const BusBranchGraph& graph() const noexcept { return graph_; }
    int bus_count() const noexcept { return net_.bus_count(); }
    int branch_count() const noexcept { return net_.branch_count(); }

    const std::vector<BranchAdmittance>& branches() const noexcept { return branches_; }
    const std::vector<std::complex<double>>& shunts() const noexcept { return shunt_; }
    /// Specified net injection (generation minus load), pu.
    const std::vector<std::complex<double>>& injection() const noexcept { return s_spec_; }
    const std::vector<BusType>& bus_types() const noexcept { return types_; }
    const std::vector<double>& v_set() const noexcept { return v_set_; }
    const std::vector<double>& q_max() const noexcept { return q_max_; }
    const std::vector<double>& q_min() const noexcept { return q_min_; }
    const std::vector<double>& q_load() const noexcept { return q_load_; }
    int slack() const noexcept { return slack_; }
    double slack_angle() const noexcept { return slack_angle_; }

  private:
    NetworkCase net_;
    BusBranchGraph graph_;
    std::vector<BranchAdmittance> branches_;
    std::vector<std::complex<double>> shunt_;
    std::vector<std::complex<double>> s_spec_;
    std::vector<BusType> types_;
    std::vector<double> v_set_, q_max_, q_min_, q_load_;
    int slack_ = 0;
    double slack_angle_ = 0.0;
};

/// Newton-Raphson in polar coordinates from a flat start with a sparse Jacobian.
/// Throws PreconditionError when c islands the network. A singular Jacobian or
/// divergence yields converged == false.
PowerFlowSolution solve_acpf(const PreparedNetwork& net, const ContingencyVector& c, const SolverOptions& opts = {});
PowerFlowSolution solve_acpf(const NetworkCase& net, const OperatingState& state, const ContingencyVector& c,
                             const SolverOptions& opts = {});

/// Complex power injection S_i = V_i conj(sum_j Y_ij V_j) recomputed from a solution (pu).
std::vector<std::complex<double>> bus_injections(const PreparedNetwork& net, const ContingencyVector& c,
                                                 const PowerFlowSolution& sol);

// --- severity -----------------------------------------------------------------

struct SeverityConfig {
    double tau = 1.0;
    double s_fail = 10000.0;
    double band_lo = 1.0;
    double band_hi = 10000.0;

    /// Throws ValidationError unless 0 < tau < s_fail and the band lies in [0, s_fail].
    void validate() const;
    /// Default band [tau, s_fail).
    static SeverityConfig with_tau(double tau, double s_fail = 10000.0);
};

/// max_e |P_post - P_base| (MW) + max_i |V_post - 1| (pu); s_fail if post did not converge.
double severity(const PowerFlowSolution& base, const PowerFlowSolution& post, const SeverityConfig& cfg);

enum class Outcome { convergent_in_band, convergent_out_of_band, nonconvergent };

Outcome classify(double s, const SeverityConfig& cfg);
const char* outcome_name(Outcome o);

struct InteractionTerms {
    double r_i = 0.0;
    double r_j = 0.0;
    double interaction = 0.0;  ///< S(e_i + e_j) - r_i - r_j
    double pair = 0.0;         ///< S(e_i + e_j)
};

/// Single-outage effects and their pairwise interaction for branches i and j.
InteractionTerms interaction_decomposition(const PreparedNetwork& net, int i, int j, const SeverityConfig& cfg,
                                           const SolverOptions& opts = {});

}  // namespace nkscreen

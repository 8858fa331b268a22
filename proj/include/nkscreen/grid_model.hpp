#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nkscreen/contingency_vector.hpp"

namespace nkscreen {

enum class BusType { pq = 1, pv = 2, slack = 3 };

/// One row of the MATPOWER bus table. Power quantities in MW / MVAr, voltages in pu.
struct Bus {
    int id = 0;
    BusType type = BusType::pq;
    double p_load_mw = 0.0;
    double q_load_mvar = 0.0;
    double gs_mw = 0.0;
    double bs_mvar = 0.0;
    int area = 1;
    double vm = 1.0;
    double va_deg = 0.0;
    double base_kv = 0.0;
    int zone = 1;
    double v_max = 1.1;
    double v_min = 0.9;

    friend bool operator==(const Bus&, const Bus&) = default;
};

/// One row of the MATPOWER branch table, impedances in pu on the system base.
struct Branch {
    int from_id = 0;
    int to_id = 0;
    double r = 0.0;
    double x = 0.0;
    double b = 0.0;
    double rate_a = 0.0;
    double rate_b = 0.0;
    double rate_c = 0.0;
    double ratio = 0.0;  ///< off-nominal tap; 0 means a line (ratio 1)
    double shift_deg = 0.0;
    bool in_service = true;
    double ang_min = -360.0;
    double ang_max = 360.0;
    bool contingencable = true;

    friend bool operator==(const Branch&, const Branch&) = default;
};

struct Generator {
    int bus_id = 0;
    double p_mw = 0.0;
    double q_mvar = 0.0;
    double q_max = 0.0;
    double q_min = 0.0;
    double v_set = 1.0;
    double m_base = 100.0;
    bool in_service = true;
    double p_max = 0.0;
    double p_min = 0.0;

    friend bool operator==(const Generator&, const Generator&) = default;
};

/// Static bus/branch/generator model. Construct through make_case or parse_case,
/// which validate every invariant; treat instances as immutable afterwards.
struct NetworkCase {
    std::string name;
    double base_mva = 100.0;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<Generator> generators;

    int bus_count() const noexcept { return static_cast<int>(buses.size()); }
    int branch_count() const noexcept { return static_cast<int>(branches.size()); }
    int gen_count() const noexcept { return static_cast<int>(generators.size()); }

    /// Internal 0-based index of an external bus number; throws ValidationError.
    int bus_index(int bus_id) const;
    int from_index(int branch) const { return bus_index(branches[branch].from_id); }
    int to_index(int branch) const { return bus_index(branches[branch].to_id); }
    int slack_index() const;

    /// Number of contingencable in-service branches.
    int contingencable_count() const;

    friend bool operator==(const NetworkCase& a, const NetworkCase& b) {
        return a.name == b.name && a.base_mva == b.base_mva && a.buses == b.buses &&
               a.branches == b.branches && a.generators == b.generators;
    }
};

/// Validate and return the case. Throws ValidationError on: not exactly one slack bus,
/// dangling branch or generator endpoints, zero reactance, duplicate bus ids,
/// no contingencable branch.
NetworkCase make_case(NetworkCase raw);

/// Parse MATPOWER `.m` text (mpc.baseMVA, mpc.bus, mpc.gen, mpc.branch). An optional
/// `mpc.noncontingencable = [i j ...];` row lists 1-based branch rows that may not be outaged.
NetworkCase parse_case(std::string_view text, std::string name = {});
NetworkCase load_case(const std::string& path);
/// Inverse of parse_case; full double precision so parse(serialize(c)) == c.
std::string serialize_case(const NetworkCase& net);

/// Bus-branch adjacency with branch ids on each edge.
class BusBranchGraph {
  public:
    struct Edge {
        int branch;
        int other;
    };

    explicit BusBranchGraph(const NetworkCase& net);

    int bus_count() const noexcept { return static_cast<int>(adjacency_.size()); }
    const std::vector<Edge>& neighbors(int bus) const { return adjacency_[bus]; }
    /// (from, to) bus indices per branch.
    const std::vector<std::pair<int, int>>& endpoints() const noexcept { return endpoints_; }
    /// In-service branches minus the outaged ones.
    std::vector<std::uint8_t> active_mask(const ContingencyVector& c) const;
    int active_edge_count(const ContingencyVector& c) const;
    /// Union-find connectivity of the buses with c's branches removed.
    bool is_connected(const ContingencyVector& c) const;

  private:
    std::vector<std::vector<Edge>> adjacency_;
    std::vector<std::pair<int, int>> endpoints_;
    std::vector<std::uint8_t> in_service_;
};

/// True iff removing c's branches (and out-of-service ones) leaves one component spanning all buses.
bool is_connected(const NetworkCase& net, const ContingencyVector& c);

// --- operating states -------------------------------------------------------

struct Interval {
    double lo = 1.0;
    double hi = 1.0;
};

/// Pre-contingency operating point. feature_vector layout (all pu):
/// [P_load per bus, Q_load per bus, P_set per generator, V_set per generator].
/// Models normalize it with statistics fitted on their training pool.
struct OperatingState {
    std::string state_id;
    std::vector<std::pair<double, double>> load_scale;  ///< (P, Q) multiplier per bus
    std::vector<double> gen_scale;                      ///< P multiplier per generator
    std::vector<double> feature_vector;

    friend bool operator==(const OperatingState&, const OperatingState&) = default;
};

std::size_t feature_length(const NetworkCase& net);

/// Build a state from explicit multipliers; multipliers must be strictly positive.
OperatingState make_state(const NetworkCase& net, std::string state_id,
                          std::vector<std::pair<double, double>> load_scale, std::vector<double> gen_scale);
OperatingState nominal_state(const NetworkCase& net);

/// The case with the state's loads and generator setpoints applied.
NetworkCase apply_state(const NetworkCase& net, const OperatingState& state);

struct SolverOptions;

constexpr int kStateRetryBudget = 50;

/// Draw per-element multipliers uniformly from the intervals, resampling (up to
/// `retries` times) while the base-case power flow diverges. Throws InfeasibleError
/// when the budget is exhausted. `attempts`, if given, receives the number of draws used.
OperatingState perturb_state(const NetworkCase& net, std::uint64_t seed, Interval load_range, Interval gen_range,
                             const SolverOptions& solver, int retries = kStateRetryBudget, int* attempts = nullptr);

}  // namespace nkscreen

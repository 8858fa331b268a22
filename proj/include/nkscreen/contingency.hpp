#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "nkscreen/contingency_vector.hpp"
#include "nkscreen/grid_model.hpp"
#include "nkscreen/rng.hpp"

namespace nkscreen {

/// Weight-k outage patterns on a case that avoid excluded branches and keep
/// the network connected. Branches flagged non-contingencable in the case are
/// always excluded.
class FeasibleSetSpec {
  public:
    FeasibleSetSpec(const NetworkCase& net, int k, std::vector<int> excluded = {});

    const NetworkCase& network() const noexcept { return *net_; }
    int n() const noexcept { return net_->branch_count(); }
    int k() const noexcept { return k_; }
    /// Same case and exclusions, different weight.
    FeasibleSetSpec with_k(int k) const;

    bool is_excluded(int branch) const { return excluded_[branch] != 0; }
    const BusBranchGraph& graph() const noexcept { return *graph_; }

    /// Weight, exclusion and connectivity test.
    bool feasible(const ContingencyVector& c) const;

  private:
    const NetworkCase* net_;
    int k_;
    std::vector<std::uint8_t> excluded_;
    std::shared_ptr<const BusBranchGraph> graph_;
};

struct KRange {
    int k_min = 2;
    int k_max = 2;
};

/// Visits feasible patterns in lexicographic order. Returning false from visit stops early.
void for_each_feasible(const FeasibleSetSpec& spec, const std::function<bool(const ContingencyVector&)>& visit);
std::vector<ContingencyVector> enumerate_feasible(const FeasibleSetSpec& spec);
/// Number of weight-k patterns, C(N, k), saturating at UINT64_MAX.
std::uint64_t binomial(int n, int k);

inline constexpr int kRejectionBudget = 10000;

/// Rejection sampling: uniform weight-k draws until one is feasible.
ContingencyVector uniform_sample(const FeasibleSetSpec& spec, Rng& rng);
ContingencyVector uniform_sample(const FeasibleSetSpec& spec, std::uint64_t seed);
/// k uniform in the range, then a uniform feasible pattern of that weight.
ContingencyVector uniform_sample(const FeasibleSetSpec& spec, KRange range, Rng& rng);

inline constexpr long kProjectionSearchBudget = 200000;

/// Top-k entries of raw (ties to the lower index), skipping excluded branches.
/// If that islands the network, the first feasible k-set in rank order is
/// returned instead. sample_index is only reported in the error.
ContingencyVector project(const std::vector<double>& raw, const FeasibleSetSpec& spec, std::size_t sample_index = 0);

}  // namespace nkscreen

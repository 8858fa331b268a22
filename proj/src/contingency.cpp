#include "nkscreen/contingency.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "nkscreen/errors.hpp"
#include "nkscreen/union_find.hpp"

namespace nkscreen {

FeasibleSetSpec::FeasibleSetSpec(const NetworkCase& net, int k, std::vector<int> excluded)
    : net_(&net), k_(k), excluded_(net.branch_count(), 0), graph_(std::make_shared<BusBranchGraph>(net)) {
    if (k < 1) throw ValidationError("outage weight k must be at least 1");
    if (k > net.branch_count()) throw ValidationError("outage weight k exceeds the branch count");
    for (int e : excluded) {
        if (e < 0 || e >= net.branch_count()) throw ValidationError("excluded branch index out of range");
        excluded_[e] = 1;
    }
    for (int e = 0; e < net.branch_count(); ++e)
        if (!net.branches[e].contingencable || !net.branches[e].in_service) excluded_[e] = 1;
}

FeasibleSetSpec FeasibleSetSpec::with_k(int k) const {
    FeasibleSetSpec out = *this;
    if (k < 1 || k > n()) throw ValidationError("outage weight k out of range");
    out.k_ = k;
    return out;
}

bool FeasibleSetSpec::feasible(const ContingencyVector& c) const {
    if (c.n() != n() || c.k() != k_) return false;
    for (int e : c.outaged())
        if (excluded_[e]) return false;
    return graph_->is_connected(c);
}

std::uint64_t binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    k = std::min(k, n - k);
    unsigned __int128 r = 1;
    for (int i = 1; i <= k; ++i) {
        r = r * static_cast<unsigned>(n - k + i) / static_cast<unsigned>(i);
        if (r > UINT64_MAX) return UINT64_MAX;
    }
    return static_cast<std::uint64_t>(r);
}

void for_each_feasible(const FeasibleSetSpec& spec, const std::function<bool(const ContingencyVector&)>& visit) {
    const int n = spec.n(), k = spec.k();
    std::vector<int> allowed;
    for (int e = 0; e < n; ++e)
        if (!spec.is_excluded(e)) allowed.push_back(e);
    const int m = static_cast<int>(allowed.size());
    if (k > m) return;

    // Combinations of the allowed branches in lexicographic order; since allowed
    // is sorted this is also lexicographic over branch indices.
    std::vector<int> pos(k);
    std::iota(pos.begin(), pos.end(), 0);
    std::vector<int> idx(k);
    while (true) {
        for (int i = 0; i < k; ++i) idx[i] = allowed[pos[i]];
        auto c = ContingencyVector::from_indices(n, idx);
        if (spec.graph().is_connected(c) && !visit(c)) return;
        int i = k - 1;
        while (i >= 0 && pos[i] == m - k + i) --i;
        if (i < 0) return;
        ++pos[i];
        for (int j = i + 1; j < k; ++j) pos[j] = pos[j - 1] + 1;
    }
}

std::vector<ContingencyVector> enumerate_feasible(const FeasibleSetSpec& spec) {
    std::vector<ContingencyVector> out;
    for_each_feasible(spec, [&](const ContingencyVector& c) {
        out.push_back(c);
        return true;
    });
    return out;
}

ContingencyVector uniform_sample(const FeasibleSetSpec& spec, Rng& rng) {
    const int n = spec.n(), k = spec.k();
    std::vector<int> perm(n);
    for (int attempt = 0; attempt < kRejectionBudget; ++attempt) {
        // partial Fisher-Yates: first k slots are a uniform k-subset
        std::iota(perm.begin(), perm.end(), 0);
        for (int i = 0; i < k; ++i) std::swap(perm[i], perm[uniform_int(rng, i, n - 1)]);
        auto c = ContingencyVector::from_indices(n, std::vector<int>(perm.begin(), perm.begin() + k));
        if (spec.feasible(c)) return c;
    }
    throw InfeasibleError("rejection budget of " + std::to_string(kRejectionBudget) +
                          " draws exhausted; feasible set is empty or nearly so");
}

ContingencyVector uniform_sample(const FeasibleSetSpec& spec, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    return uniform_sample(spec, rng);
}

ContingencyVector uniform_sample(const FeasibleSetSpec& spec, KRange range, Rng& rng) {
    if (range.k_min < 1 || range.k_max < range.k_min) throw ValidationError("invalid k range");
    return uniform_sample(spec.with_k(uniform_int(rng, range.k_min, range.k_max)), rng);
}

ContingencyVector project(const std::vector<double>& raw, const FeasibleSetSpec& spec, std::size_t sample_index) {
    const int n = spec.n(), k = spec.k();
    if (static_cast<int>(raw.size()) != n) throw ValidationError("projection input has the wrong length");
    for (double v : raw)
        if (!std::isfinite(v)) throw ValidationError("projection input is not finite");

    std::vector<int> order;
    order.reserve(n);
    for (int e = 0; e < n; ++e)
        if (!spec.is_excluded(e)) order.push_back(e);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return raw[a] > raw[b]; });

    // Depth-first search along the ranking for the first feasible k-set in
    // rank order. When plain greedy succeeds this is its answer. Removing
    // branches only splits components further, so an islanding prefix prunes
    // its whole subtree.
    const auto& ends = spec.graph().endpoints();
    std::vector<std::uint8_t> out(n, 0);
    for (int e = 0; e < n; ++e)
        if (!spec.network().branches[e].in_service) out[e] = 1;
    const int m = static_cast<int>(order.size());
    std::vector<int> chosen;
    long budget = kProjectionSearchBudget;
    auto connected = [&] {
        UnionFind uf(spec.graph().bus_count());
        for (int e = 0; e < n; ++e)
            if (!out[e]) uf.unite(ends[e].first, ends[e].second);
        return uf.components() == 1;
    };
    std::function<bool(int)> extend = [&](int from) {
        if (static_cast<int>(chosen.size()) == k) return true;
        for (int r = from; r <= m - (k - static_cast<int>(chosen.size())); ++r) {
            if (--budget < 0) return false;
            const int cand = order[r];
            out[cand] = 1;
            if (connected()) {
                chosen.push_back(cand);
                if (extend(r + 1)) return true;
                chosen.pop_back();
            }
            out[cand] = 0;
        }
        return false;
    };
    if (!extend(0))
        throw ProjectionError(sample_index, "sample " + std::to_string(sample_index) + ": no feasible " +
                                                std::to_string(k) + "-outage pattern found along the ranking");
    return ContingencyVector::from_indices(n, chosen);
}

}  // namespace nkscreen

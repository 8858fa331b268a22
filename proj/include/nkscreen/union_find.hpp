#pragma once

#include <numeric>
#include <vector>

namespace nkscreen {

class UnionFind {
  public:
    explicit UnionFind(int n) : parent_(n), rank_(n, 0), components_(n) {
        std::iota(parent_.begin(), parent_.end(), 0);
    }

    int find(int x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    bool unite(int x, int y) {
        int px = find(x);
        int py = find(y);
        if (px == py) return false;
        if (rank_[px] < rank_[py]) std::swap(px, py);
        parent_[py] = px;
        if (rank_[px] == rank_[py]) ++rank_[px];
        --components_;
        return true;
    }

    bool connected(int x, int y) { return find(x) == find(y); }
    int components() const noexcept { return components_; }

  private:
    std::vector<int> parent_;
    std::vector<int> rank_;
    int components_;
};

}  // namespace nkscreen

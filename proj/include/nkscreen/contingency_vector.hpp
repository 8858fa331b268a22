#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace nkscreen {

/// Binary outage pattern over the N branches of a case, stored as the sorted
/// list of outaged branch indices (0-based). k() is the Hamming weight.
class ContingencyVector {
  public:
    ContingencyVector() = default;

    /// Empty (base-case) pattern of length n.
    explicit ContingencyVector(int n) : n_(n) {}

    /// Indices may arrive in any order; duplicates or out-of-range indices throw ValidationError.
    static ContingencyVector from_indices(int n, std::vector<int> indices);
    /// Every nonzero entry of bits is an outage.
    static ContingencyVector from_bits(std::span<const std::uint8_t> bits);
    static ContingencyVector single(int n, int index) { return from_indices(n, {index}); }

    int n() const noexcept { return n_; }
    int k() const noexcept { return static_cast<int>(outaged_.size()); }
    const std::vector<int>& outaged() const noexcept { return outaged_; }
    bool contains(int branch) const;

    std::vector<std::uint8_t> bits() const;
    /// The {0,1} pattern as reals, the relaxation fed to the surrogate.
    std::vector<double> relaxed() const;

    /// Branch list as "3;7;12" (0-based), the CSV encoding.
    std::string to_string() const;

    friend bool operator==(const ContingencyVector&, const ContingencyVector&) = default;
    /// Lexicographic order on the sorted branch list (then on n).
    friend std::strong_ordering operator<=>(const ContingencyVector& a, const ContingencyVector& b) {
        if (auto c = a.outaged_ <=> b.outaged_; c != 0) return c;
        return a.n_ <=> b.n_;
    }

  private:
    int n_ = 0;
    std::vector<int> outaged_;
};

}  // namespace nkscreen

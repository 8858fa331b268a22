#include "nkscreen/contingency_vector.hpp"

#include <algorithm>

#include "nkscreen/errors.hpp"

namespace nkscreen {

ContingencyVector ContingencyVector::from_indices(int n, std::vector<int> indices) {
    std::sort(indices.begin(), indices.end());
    if (std::adjacent_find(indices.begin(), indices.end()) != indices.end())
        throw ValidationError("contingency vector has a repeated branch index");
    if (!indices.empty() && (indices.front() < 0 || indices.back() >= n))
        throw ValidationError("contingency branch index out of range");
    ContingencyVector c(n);
    c.outaged_ = std::move(indices);
    return c;
}

ContingencyVector ContingencyVector::from_bits(std::span<const std::uint8_t> bits) {
    ContingencyVector c(static_cast<int>(bits.size()));
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i]) c.outaged_.push_back(static_cast<int>(i));
    return c;
}

bool ContingencyVector::contains(int branch) const {
    return std::binary_search(outaged_.begin(), outaged_.end(), branch);
}

std::vector<std::uint8_t> ContingencyVector::bits() const {
    std::vector<std::uint8_t> out(n_, 0);
    for (int i : outaged_) out[i] = 1;
    return out;
}

std::vector<double> ContingencyVector::relaxed() const {
    std::vector<double> out(n_, 0.0);
    for (int i : outaged_) out[i] = 1.0;
    return out;
}

std::string ContingencyVector::to_string() const {
    std::string s;
    for (std::size_t i = 0; i < outaged_.size(); ++i) {
        if (i) s += ';';
        s += std::to_string(outaged_[i]);
    }
    return s;
}

}  // namespace nkscreen

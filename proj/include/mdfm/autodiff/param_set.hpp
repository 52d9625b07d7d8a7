#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mdfm/autodiff/tensor.hpp"

namespace mdfm::ad {

// Insertion-ordered collection of named tensors.
class ParamSet {
public:
    using Entry = std::pair<std::string, Tensor>;

    void add(std::string name, Tensor value);
    bool contains(std::string_view name) const;
    Tensor& at(std::string_view name);
    const Tensor& at(std::string_view name) const;
    std::size_t index_of(std::string_view name) const;

    Entry& entry(std::size_t i) { return entries_.at(i); }
    const Entry& entry(std::size_t i) const { return entries_.at(i); }
    std::size_t size() const noexcept { return entries_.size(); }
    std::size_t scalar_count() const noexcept;

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    // Same names and shapes, all values `fill`.
    ParamSet like(double fill = 0.0) const;
    bool all_finite() const noexcept;
    void set_zero();

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace mdfm::ad

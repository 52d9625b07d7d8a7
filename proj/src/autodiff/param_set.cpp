#include "mdfm/autodiff/param_set.hpp"

#include <stdexcept>

namespace mdfm::ad {

void ParamSet::add(std::string name, Tensor value) {
    if (index_.count(name)) throw std::invalid_argument("ParamSet: duplicate name " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
}

bool ParamSet::contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

std::size_t ParamSet::index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw std::out_of_range("ParamSet: no tensor named " + std::string(name));
    return it->second;
}

Tensor& ParamSet::at(std::string_view name) { return entries_[index_of(name)].second; }
const Tensor& ParamSet::at(std::string_view name) const { return entries_[index_of(name)].second; }

std::size_t ParamSet::scalar_count() const noexcept {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
}

ParamSet ParamSet::like(double fill) const {
    ParamSet out;
    for (const auto& [name, t] : entries_) out.add(name, Tensor(t.shape(), fill));
    return out;
}

bool ParamSet::all_finite() const noexcept {
    for (const auto& e : entries_)
        if (!e.second.all_finite()) return false;
    return true;
}

void ParamSet::set_zero() {
    for (auto& e : entries_) e.second.fill(0.0);
}

}  // namespace mdfm::ad

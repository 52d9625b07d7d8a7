#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mdfm/autodiff/gradcheck.hpp"
#include "mdfm/autodiff/graph.hpp"
#include "mdfm/autodiff/ops.hpp"
#include "mdfm/seqdata/dataset.hpp"

namespace testutil {

using mdfm::ad::Graph;
using mdfm::ad::ParamSet;
using mdfm::ad::Shape;
using mdfm::ad::Tensor;
using mdfm::ad::Var;

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Tensor rand_tensor(const Shape& s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(s);
    for (auto& v : t.vec()) v = uniform(rng, lo, hi);
    return t;
}

// Same values as rand_tensor but bounded away from zero, for ops with a
// kink at the origin.
inline Tensor rand_tensor_off_zero(const Shape& s, std::mt19937_64& rng, double gap = 0.05) {
    Tensor t(s);
    for (auto& v : t.vec()) {
        const double m = uniform(rng, gap, 1.0);
        v = (rng() & 1) ? m : -m;
    }
    return t;
}

using PrimitiveFn = std::function<Var(Graph&, const std::vector<Var>&)>;

// Finite-difference check of one primitive: the scalar loss is
// sum(op(inputs) * R) for a fixed random R, so every output coordinate
// contributes with a distinct weight.
inline double primitive_error(const PrimitiveFn& op, const std::vector<Tensor>& inputs, double eps = 1e-6,
                              std::uint64_t seed = 99) {
    ParamSet ps;
    for (std::size_t i = 0; i < inputs.size(); ++i) ps.add("x" + std::to_string(i), inputs[i]);
    auto build = [&](Graph& g, const ParamSet& p) {
        std::vector<Var> xs;
        for (std::size_t i = 0; i < p.size(); ++i) xs.push_back(g.param(p.entry(i).first, p.entry(i).second));
        Var out = op(g, xs);
        std::mt19937_64 rng(seed);
        Var r = g.constant(rand_tensor(out.shape(), rng));
        return mdfm::ad::sum(mdfm::ad::hadamard(out, r));
    };
    return mdfm::ad::grad_check(build, ps, eps).max_rel_error;
}

inline std::string random_dna(std::size_t n, std::mt19937_64& rng) {
    static const char* kBases = "ACGT";
    std::string s(n, 'A');
    for (auto& c : s) c = kBases[rng() % 4];
    return s;
}

}  // namespace testutil

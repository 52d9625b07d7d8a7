#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "mdfm/autodiff/graph.hpp"

// Differentiable primitives. Every op validates shapes and throws
// std::invalid_argument naming the op and the offending shapes.
namespace mdfm::ad {

// [M,K] x [K,N] -> [M,N]. Rank-1 operands are treated as one row.
Var matmul(Var a, Var b);
// Elementwise sum. `b` may also be a row ([N] or [1,N]) broadcast over the
// rows of an [M,N] `a`.
Var add(Var a, Var b);
Var hadamard(Var a, Var b);
// Multiplies every element of `a` by the single element of `s`.
Var mul_scalar(Var a, Var s);
Var scale(Var a, double c);

Var relu(Var x);
Var tanh(Var x);
// tanh approximation.
Var gelu(Var x);

Var softmax(Var x, int axis = -1);
// Normalizes along `axis`, then applies the affine gamma/beta indexed along
// the same axis.
Var layer_norm(Var x, Var gamma, Var beta, int axis = -1, double eps = 1e-5);
// Inverted dropout with a mask drawn from `rng`; identity when `rng` is
// null or rate == 0.
Var dropout(Var x, double rate, std::mt19937_64* rng);

// Mean along `axis`, keeping the reduced axis with extent 1.
Var mean_pool(Var x, int axis = 0);
Var sum(Var x);

// Gathers rows of a [V,D] table -> [ids.size(), D].
Var embedding_lookup(Var table, std::span<const int> ids);
Var reshape(Var x, Shape shape);
// -> [1, numel]
Var flatten(Var x);
Var concat(const std::vector<Var>& xs, int axis);
Var slice(Var x, int axis, std::size_t begin, std::size_t end);

// Multi-head attention over already projected q, k, v of shape [T,D]
// (D divisible by nhead). The per-head probabilities [nhead,T,T] are saved
// as the node's aux tensor.
Var scaled_dot_attention(Var q, Var k, Var v, std::size_t nhead);

// -log softmax(logits)[label] for a single row of logits.
Var cross_entropy(Var logits, int label);
// |x - b| + b with subgradient 0 at x == b.
Var flood(Var x, double b);

}  // namespace mdfm::ad

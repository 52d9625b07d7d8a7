#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "mdfm/autodiff/gradcheck.hpp"
#include "mdfm/autodiff/graph.hpp"
#include "mdfm/autodiff/ops.hpp"

using namespace mdfm::ad;
using testutil::primitive_error;
using testutil::rand_tensor;

namespace {
constexpr double kPrimitiveTol = 1e-5;
}

TEST_CASE("primitive fixed points") {
    Graph g;
    Var z = g.input(Tensor({4}, 0.0));
    const Tensor sm = softmax(z).value();
    for (double v : sm.data()) CHECK(v == 0.25);

    Var c = g.input(Tensor({1, 5}, 3.0));
    Var ln = layer_norm(c, g.constant(Tensor({5}, 1.0)), g.constant(Tensor({5}, 0.0)));
    for (double v : ln.value().data()) CHECK(v == 0.0);

    CHECK(gelu(g.input(Tensor::scalar(0.0))).value().item() == 0.0);
    CHECK(relu(g.input(Tensor::scalar(-1.0))).value().item() == 0.0);
}

TEST_CASE("softmax rows are probability vectors") {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 50; ++t) {
        Graph g;
        Var x = g.input(rand_tensor({3, 7}, rng, -20, 20));
        for (int axis : {0, 1}) {
            const Tensor s = softmax(x, axis).value();
            const std::size_t n_out = axis == 1 ? 3 : 7, n_in = axis == 1 ? 7 : 3;
            for (std::size_t o = 0; o < n_out; ++o) {
                double total = 0;
                for (std::size_t i = 0; i < n_in; ++i) {
                    const double v = axis == 1 ? s.at(o, i) : s.at(i, o);
                    CHECK(v >= 0.0);
                    total += v;
                }
                CHECK(std::abs(total - 1.0) < 1e-12);
            }
        }
    }
}

TEST_CASE("backprop on an analytic loss") {
    Graph g;
    const Tensor w_val = Tensor::row({1.0, 2.0});
    const Tensor unused_val = Tensor::row({5.0, 6.0});
    Var w = g.param("w", w_val);
    g.param("unused", unused_val);
    Var loss = sum(hadamard(w, w));
    const auto grads = backprop(g, loss);
    CHECK(grads.at("w")[0] == 2.0);
    CHECK(grads.at("w")[1] == 4.0);
    CHECK(grads.at("unused")[0] == 0.0);
    CHECK(grads.at("unused")[1] == 0.0);
}

TEST_CASE("backward rejects a non-scalar loss") {
    Graph g;
    Var x = g.input(Tensor({2}, 1.0), true);
    CHECK_THROWS_AS(g.backward(relu(x)), std::invalid_argument);
}

TEST_CASE("backward visits nodes in exact reverse creation order") {
    Graph g;
    std::vector<int> order;
    Var x = g.input(Tensor::scalar(1.0), true);
    std::vector<Var> chain{x};
    // A diamond-free chain plus a side branch that joins at the end.
    for (int i = 0; i < 6; ++i) {
        const int prev = chain.back().id;
        const int side = i == 3 ? chain[1].id : prev;
        std::vector<int> inputs{prev};
        if (side != prev) inputs.push_back(side);
        chain.push_back(g.record("probe", Tensor::scalar(1.0), inputs, [&order, inputs](Graph& gr, int self, const Tensor& go) {
            order.push_back(self);
            for (int in : inputs) gr.accumulate(in, go);
        }));
    }
    g.backward(chain.back());
    REQUIRE(order.size() == 6);
    for (std::size_t i = 0; i + 1 < order.size(); ++i) CHECK(order[i] > order[i + 1]);
}

TEST_CASE("shape mismatch names the op and both shapes") {
    Graph g;
    Var a = g.input(Tensor({2, 3}));
    Var b = g.input(Tensor({2, 3}));
    try {
        matmul(a, b);
        FAIL("expected invalid_argument");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2,3]") != std::string::npos);
    }
    CHECK_THROWS_AS(add(a, g.input(Tensor({3, 2}))), std::invalid_argument);
    CHECK_THROWS_AS(hadamard(a, g.input(Tensor({2, 2}))), std::invalid_argument);
    CHECK_THROWS_AS(reshape(a, {4}), std::invalid_argument);
    CHECK_THROWS_AS(scaled_dot_attention(a, a, a, 2), std::invalid_argument);
}

TEST_CASE("non-finite op output is a fault") {
    Graph g;
    Var x = g.input(Tensor::scalar(1e308));
    CHECK_THROWS_AS(scale(x, 10.0), std::domain_error);
}

TEST_CASE("dropout: identity in eval mode, seeded mask in train mode") {
    std::mt19937_64 rng(4);
    const Tensor xv = rand_tensor({4, 6}, rng);
    Graph g;
    Var x = g.input(xv);
    CHECK(max_abs_diff(dropout(x, 0.5, nullptr).value(), xv) == 0.0);
    std::mt19937_64 r1(42), r2(42);
    const Tensor a = dropout(x, 0.5, &r1).value();
    const Tensor b = dropout(x, 0.5, &r2).value();
    CHECK(max_abs_diff(a, b) == 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK((a[i] == 0.0 || a[i] == doctest::Approx(2.0 * xv[i])));
}

TEST_CASE("every primitive's VJP matches central differences") {
    std::mt19937_64 rng(2024);
    auto r = [&](Shape s) { return rand_tensor(s, rng); };

    CHECK(primitive_error([](Graph&, const std::vector<Var>& x) { return matmul(x[0], x[1]); }, {r({3, 4}), r({4, 5})}) <
          kPrimitiveTol);
    CHECK(primitive_error([](Graph&, const std::vector<Var>& x) { return add(x[0], x[1]); }, {r({3, 4}), r({3, 4})}) <
          kPrimitiveTol);
    CHECK(primitive_error([](Graph&, const std::vector<Var>& x) { return add(x[0], x[1]); }, {r({3, 4}), r({4})}) <
          kPrimitiveTol);
    CHECK(primitive_error([](Graph&, const std::vector<Var>& x) { return hadamard(x[0], x[1]); },
                          {r({2, 5}), r({2, 5})}) < kPrimitiveTol);
    CHECK(primitive_error([](Graph&, const std::vector<Var>& x) { return mul_scalar(x[0], x[1]); },
                          {r({2, 5}), r({1})}) < kPrimitiveTol);
    CHECK(primitive_error([](Graph&, const std::vector<Var>& x) { return scale(x[0], -1.7); }, {r({2, 5})}) <
          kPrimitiveTol);
    CHECK(primitive_error([](Graph&, const std::vector<Var>& x) { return relu(x[0]); },
                          {testutil::rand_tensor_off_zero({4, 4}, rng)}) < kPrimitiveTol);
    CHECK(primitive_error([](Graph&, const std::vector<Var>& x) { return mdfm::ad::tanh(x[0]); }, {r({4, 4})}) <
          kPrimitiveTol);
    CHECK(primitive_error([](Graph&, const std::vector<Var>& x) { return gelu(x[0]); },
                          {rand_tensor({4, 4}, rng, -3, 3)}) < kPrimitiveTol);
    for (int axis : {0, 1, -1}) {
        CHECK(primitive_error([axis](Graph&, const std::vector<Var>& x) { return softmax(x[0], axis); },
                              {rand_tensor({3, 5}, rng, -2, 2)}) < kPrimitiveTol);
        CHECK(primitive_error([axis](Graph&, const std::vector<Var>& x) { return layer_norm(x[0], x[1], x[2], axis); },
                              {r({3, 5}), r({axis == 0 ? 3u : 5u}), r({axis == 0 ? 3u : 5u})}) < kPrimitiveTol);
    }
    for (int axis : {0, 1}) {
        CHECK(primitive_error([axis](Graph&, const std::vector<Var>& x) { return mean_pool(x[0], axis); }, {r({3, 5})}) <
              kPrimitiveTol);
    }
    CHECK(primitive_error([](Graph&, const std::vector<Var>& x) { return sum(x[0]); }, {r({3, 5})}) < kPrimitiveTol);
    CHECK(primitive_error(
              [](Graph&, const std::vector<Var>& x) {
                  static const std::vector<int> ids{2, 0, 2, 4};
                  return embedding_lookup(x[0], ids);
              },
              {r({6, 3})}) < kPrimitiveTol);
    CHECK(primitive_error([](Graph&, const std::vector<Var>& x) { return reshape(x[0], {5, 3}); }, {r({3, 5})}) <
          kPrimitiveTol);
    CHECK(primitive_error([](Graph&, const std::vector<Var>& x) { return flatten(x[0]); }, {r({3, 5})}) <
          kPrimitiveTol);
    for (int axis : {0, 1}) {
        CHECK(primitive_error([axis](Graph&, const std::vector<Var>& x) { return concat({x[0], x[1]}, axis); },
                              {r({2, 2}), r({2, 2})}) < kPrimitiveTol);
        CHECK(primitive_error([axis](Graph&, const std::vector<Var>& x) { return slice(x[0], axis, 1, 3); },
                              {r({4, 4})}) < kPrimitiveTol);
    }
    CHECK(primitive_error([](Graph&, const std::vector<Var>& x) { return scaled_dot_attention(x[0], x[1], x[2], 2); },
                          {r({5, 4}), r({5, 4}), r({5, 4})}) < kPrimitiveTol);
    CHECK(primitive_error([](Graph&, const std::vector<Var>& x) { return cross_entropy(x[0], 1); }, {r({1, 2})}) <
          kPrimitiveTol);
    // Both sides of the flooding kink.
    CHECK(primitive_error([](Graph&, const std::vector<Var>& x) { return flood(sum(hadamard(x[0], x[0])), 0.01); },
                          {r({3})}) < kPrimitiveTol);
    CHECK(primitive_error([](Graph&, const std::vector<Var>& x) { return flood(sum(hadamard(x[0], x[0])), 50.0); },
                          {r({3})}) < kPrimitiveTol);
    CHECK(primitive_error(
              [](Graph&, const std::vector<Var>& x) {
                  std::mt19937_64 mask(7);
                  return dropout(x[0], 0.5, &mask);
              },
              {r({4, 4})}) < kPrimitiveTol);
}

TEST_CASE("flooding gradient is plus or minus the inner gradient") {
    for (double b : {0.0, 0.5, 100.0}) {
        Graph g;
        const Tensor xv = Tensor::row({0.3, -0.4});
        Var x = g.param("x", xv);
        Var inner = sum(hadamard(x, x));
        Var loss = flood(inner, b);
        const auto grads = backprop(g, loss);
        const double sign = inner.value().item() > b ? 1.0 : -1.0;
        CHECK(grads.at("x")[0] == doctest::Approx(sign * 0.6));
        CHECK(grads.at("x")[1] == doctest::Approx(sign * -0.8));
        CHECK(loss.value().item() >= b);
    }
}

TEST_CASE("grad_check on a two-layer MLP, a quadratic and a constant") {
    std::mt19937_64 rng(77);
    ParamSet p;
    p.add("w1", rand_tensor({4, 8}, rng));
    p.add("b1", rand_tensor({8}, rng));
    p.add("w2", rand_tensor({8, 2}, rng));
    const Tensor xin = rand_tensor({3, 4}, rng);
    auto mlp = [&](Graph& g, const ParamSet& ps) {
        Var h = mdfm::ad::tanh(add(matmul(g.constant(xin), g.param("w1", ps.at("w1"))), g.param("b1", ps.at("b1"))));
        Var o = matmul(h, g.param("w2", ps.at("w2")));
        return cross_entropy(slice(o, 0, 0, 1), 1);
    };
    const GradCheckResult r = grad_check(mlp, p, 1e-5);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.coords_checked == p.scalar_count());

    ParamSet q;
    q.add("x", rand_tensor({5}, rng));
    const Tensor a = rand_tensor({5, 5}, rng);
    auto quad = [&](Graph& g, const ParamSet& ps) {
        Var x = reshape(g.param("x", ps.at("x")), {1, 5});
        return sum(hadamard(matmul(x, g.constant(a)), x));
    };
    CHECK(grad_check(quad, q, 1e-4).max_rel_error < 1e-8);

    auto constant = [&](Graph& g, const ParamSet& ps) {
        g.param("x", ps.at("x"));
        return g.constant(Tensor::scalar(3.0));
    };
    const GradCheckResult rc = grad_check(constant, q, 1e-5);
    CHECK(rc.max_rel_error == 0.0);
    CHECK(rc.worst_analytic == 0.0);

    CHECK_THROWS_AS(grad_check(quad, q, 1e-2), std::invalid_argument);
    CHECK_THROWS_AS(grad_check(quad, q, 1e-9), std::invalid_argument);
    auto nonfinite = [&](Graph& g, const ParamSet& ps) {
        g.param("x", ps.at("x"));
        return g.constant(Tensor::scalar(std::numeric_limits<double>::quiet_NaN()));
    };
    CHECK_THROWS(grad_check(nonfinite, q, 1e-5));
}

TEST_CASE("grad_check restores parameters bit-exactly") {
    std::mt19937_64 rng(9);
    ParamSet p;
    p.add("x", rand_tensor({6}, rng));
    const Tensor before = p.at("x");
    grad_check([](Graph& g, const ParamSet& ps) { return sum(mdfm::ad::tanh(g.param("x", ps.at("x")))); }, p, 1e-5);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(p.at("x")[i] == before[i]);
}

TEST_CASE("integrated gradients") {
    std::mt19937_64 rng(31);
    const Tensor w = rand_tensor({2, 3}, rng);
    const Tensor x = rand_tensor({2, 3}, rng);
    const Tensor base = rand_tensor({2, 3}, rng);

    // Linear f: attribution is exactly w * (x - baseline) for any step count.
    ValueGrad linear = [&](const Tensor& in) {
        double f = 0;
        for (std::size_t i = 0; i < in.size(); ++i) f += w[i] * in[i];
        return std::make_pair(f, w);
    };
    for (int steps : {1, 7, 64}) {
        const IgResult r = integrated_gradients(linear, x, base, steps);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(r.attribution[i] == doctest::Approx(w[i] * (x[i] - base[i])));
        CHECK(r.completeness_gap < 1e-12);
    }
    const IgResult same = integrated_gradients(linear, x, x, 16);
    for (double v : same.attribution.data()) CHECK(v == 0.0);

    // Nonlinear f = sum(tanh(w * in)): the completeness gap shrinks with steps.
    ValueGrad nonlinear = [&](const Tensor& in) {
        double f = 0;
        Tensor g(in.shape());
        for (std::size_t i = 0; i < in.size(); ++i) {
            const double t = std::tanh(3.0 * w[i] * in[i]);
            f += t;
            g[i] = 3.0 * w[i] * (1 - t * t);
        }
        return std::make_pair(f, g);
    };
    const Tensor zero(x.shape());
    const double g8 = integrated_gradients(nonlinear, x, zero, 8).completeness_gap;
    const double g64 = integrated_gradients(nonlinear, x, zero, 64).completeness_gap;
    const double g512 = integrated_gradients(nonlinear, x, zero, 512).completeness_gap;
    CHECK(g64 < g8);
    CHECK(g512 < g64);

    CHECK_THROWS_AS(integrated_gradients(linear, x, Tensor({3, 2}), 8), std::invalid_argument);
    CHECK_THROWS_AS(integrated_gradients(linear, x, base, 0), std::invalid_argument);
}

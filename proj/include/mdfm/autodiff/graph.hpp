#pragma once

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mdfm/autodiff/tensor.hpp"

namespace mdfm::ad {

class Graph;

// Handle to a node of a Graph.
struct Var {
    Graph* graph = nullptr;
    int id = -1;

    bool valid() const noexcept { return graph != nullptr && id >= 0; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

// Receives the gradient flowing into the node's output and pushes
// contributions to its inputs through Graph::accumulate.
using BackwardFn = std::function<void(Graph&, int self, const Tensor& out_grad)>;

// Tape of operations recorded in creation (= topological) order.
//
// Parameters are bound by name and borrowed, not copied: the referenced
// tensors must outlive the graph and stay unmodified while it is in use.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var input(Tensor value, bool requires_grad = false);
    Var constant(Tensor value) { return input(std::move(value), false); }
    Var param(const std::string& name, const Tensor& value);
    // Parameters bound after this call do not require gradients; used when
    // only input gradients are wanted.
    void freeze_params(bool frozen = true) noexcept { params_frozen_ = frozen; }

    Var record(std::string_view op, Tensor value, std::vector<int> inputs, BackwardFn backward);

    const Tensor& value(int id) const { return node(id).val(); }
    bool requires_grad(int id) const { return node(id).requires_grad; }
    std::string_view op(int id) const { return node(id).op; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // Side data saved by an op (e.g. attention probabilities).
    void set_aux(int id, Tensor aux) { node(id).aux = std::move(aux); }
    const Tensor& aux(int id) const { return node(id).aux; }

    // Adds `g` into the gradient slot of node `id`; no-op for nodes that do
    // not require gradients.
    void accumulate(int id, const Tensor& g);
    Tensor& grad_slot(int id);
    // Null when nothing reached the node during the last backward pass.
    const Tensor* grad(int id) const;
    const Tensor* grad(Var v) const { return grad(v.id); }

    // Reverse pass from a scalar output, seeded with d(out)/d(out) = 1.
    void backward(Var out);
    // Reverse pass seeded with an arbitrary cotangent of out's shape.
    void backward(Var out, const Tensor& seed);
    void zero_grads();

    // Gradient per bound parameter; all-zero for parameters the pass did
    // not reach.
    std::map<std::string, Tensor> param_grads() const;

    template <class F>
    void for_each_param(F&& f) const {
        for (const auto& [name, id] : params_) f(name, id);
    }

private:
    struct Node {
        std::string_view op;
        Tensor owned;
        const Tensor* borrowed = nullptr;
        std::vector<int> inputs;
        BackwardFn backward;
        Tensor grad;
        Tensor aux;
        bool requires_grad = false;
        bool has_grad = false;

        const Tensor& val() const { return borrowed ? *borrowed : owned; }
    };

    Node& node(int id);
    const Node& node(int id) const;

    std::deque<Node> nodes_;
    std::vector<std::pair<std::string, int>> params_;
    std::map<std::string, int, std::less<>> param_index_;
    bool params_frozen_ = false;
};

std::map<std::string, Tensor> backprop(Graph& graph, Var loss);

}  // namespace mdfm::ad

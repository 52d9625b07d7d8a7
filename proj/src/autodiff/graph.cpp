#include "mdfm/autodiff/graph.hpp"

#include <stdexcept>

namespace mdfm::ad {

const Tensor& Var::value() const {
    if (!valid()) throw std::logic_error("Var: use of unbound variable");
    return graph->value(id);
}

Graph::Node& Graph::node(int id) {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
        throw std::out_of_range("Graph: node id " + std::to_string(id) + " out of range");
    }
    return nodes_[static_cast<std::size_t>(id)];
}

const Graph::Node& Graph::node(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
        throw std::out_of_range("Graph: node id " + std::to_string(id) + " out of range");
    }
    return nodes_[static_cast<std::size_t>(id)];
}

Var Graph::input(Tensor value, bool requires_grad) {
    Node n;
    n.op = "input";
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::param(const std::string& name, const Tensor& value) {
    if (auto it = param_index_.find(name); it != param_index_.end()) {
        return Var{this, it->second};
    }
    Node n;
    n.op = "param";
    n.borrowed = &value;
    n.requires_grad = !params_frozen_;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size() - 1);
    params_.emplace_back(name, id);
    param_index_.emplace(name, id);
    return Var{this, id};
}

Var Graph::record(std::string_view op, Tensor value, std::vector<int> inputs, BackwardFn backward) {
    if (!value.all_finite()) {
        throw std::domain_error(std::string(op) + ": non-finite value in output of shape " +
                                shape_str(value.shape()));
    }
    Node n;
    n.op = op;
    n.owned = std::move(value);
    for (int in : inputs) n.requires_grad = n.requires_grad || node(in).requires_grad;
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Tensor& Graph::grad_slot(int id) {
    Node& n = node(id);
    if (!n.has_grad) {
        n.grad = Tensor(n.val().shape(), 0.0);
        n.has_grad = true;
    }
    return n.grad;
}

void Graph::accumulate(int id, const Tensor& g) {
    Node& n = node(id);
    if (!n.requires_grad) return;
    if (g.size() != n.val().size()) {
        throw std::invalid_argument(std::string(n.op) + ": gradient of shape " +
                                    shape_str(g.shape()) + " for value of shape " +
                                    shape_str(n.val().shape()));
    }
    if (!n.has_grad) {
        n.grad = g.reshaped(n.val().shape());
        n.has_grad = true;
        return;
    }
    n.grad.add_scaled(g);
}

const Tensor* Graph::grad(int id) const {
    const Node& n = node(id);
    return n.has_grad ? &n.grad : nullptr;
}

void Graph::zero_grads() {
    for (auto& n : nodes_) {
        n.grad = Tensor();
        n.has_grad = false;
    }
}

void Graph::backward(Var out) {
    if (out.value().size() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_str(out.shape()));
    }
    backward(out, Tensor(out.shape(), 1.0));
}

void Graph::backward(Var out, const Tensor& seed) {
    if (out.graph != this) throw std::logic_error("backward: variable from another graph");
    if (seed.size() != out.value().size()) {
        throw std::invalid_argument("backward: seed shape " + shape_str(seed.shape()) +
                                    " does not match output " + shape_str(out.shape()));
    }
    zero_grads();
    Node& root = node(out.id);
    if (!root.requires_grad) return;
    root.grad = seed.reshaped(root.val().shape());
    root.has_grad = true;
    for (int id = out.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.has_grad || !n.backward) continue;
        // The node's grad stays valid while inputs accumulate: deque
        // elements never move and inputs always precede the node.
        n.backward(*this, id, n.grad);
    }
}

std::map<std::string, Tensor> Graph::param_grads() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, id] : params_) {
        const Node& n = node(id);
        out.emplace(name, n.has_grad ? n.grad : Tensor(n.val().shape(), 0.0));
    }
    return out;
}

std::map<std::string, Tensor> backprop(Graph& graph, Var loss) {
    graph.backward(loss);
    return graph.param_grads();
}

}  // namespace mdfm::ad

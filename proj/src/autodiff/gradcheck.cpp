#include "mdfm/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mdfm::ad {
namespace {

double eval_loss(const LossBuilder& build, const ParamSet& params) {
    Graph g;
    Var loss = build(g, params);
    if (loss.value().size() != 1) {
        throw std::invalid_argument("grad_check: loss must be scalar, got " + shape_str(loss.shape()));
    }
    const double v = loss.value()[0];
    if (!std::isfinite(v)) throw std::domain_error("grad_check: non-finite loss");
    return v;
}

void check_same_shape(const char* op, const Tensor& x, const Tensor& baseline) {
    if (x.shape() != baseline.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(x.shape()) + " vs " +
                                    shape_str(baseline.shape()));
    }
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& build, ParamSet& params, double eps,
                           const std::map<std::string, std::vector<std::size_t>>* coords) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) {
        throw std::invalid_argument("grad_check: step " + std::to_string(eps) + " outside [1e-7, 1e-3]");
    }
    std::map<std::string, Tensor> analytic;
    {
        Graph g;
        Var loss = build(g, params);
        if (!std::isfinite(loss.value().item())) throw std::domain_error("grad_check: non-finite loss");
        analytic = backprop(g, loss);
    }

    GradCheckResult res;
    for (auto& [name, tensor] : params) {
        std::vector<std::size_t> idx;
        if (coords) {
            auto it = coords->find(name);
            if (it == coords->end()) continue;
            idx = it->second;
        } else {
            idx.resize(tensor.size());
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        }
        auto ait = analytic.find(name);
        for (std::size_t i : idx) {
            if (i >= tensor.size()) throw std::out_of_range("grad_check: index out of range in " + name);
            const double a = ait == analytic.end() ? 0.0 : ait->second[i];
            const double orig = tensor[i];
            tensor[i] = orig + eps;
            const double fp = eval_loss(build, params);
            tensor[i] = orig - eps;
            const double fm = eval_loss(build, params);
            tensor[i] = orig;
            const double n = (fp - fm) / (2.0 * eps);
            const double denom = std::max({std::abs(a), std::abs(n), 1e-8});
            const double rel = std::abs(a - n) / denom;
            ++res.coords_checked;
            if (res.worst_param.empty() || rel > res.max_rel_error) {
                res.max_rel_error = rel;
                res.worst_param = name;
                res.worst_index = i;
                res.worst_analytic = a;
                res.worst_numeric = n;
            }
        }
    }
    return res;
}

IgResult integrated_gradients(const ValueGrad& f, const Tensor& x, const Tensor& baseline, int steps) {
    MultiValueGrad multi = [&f](const Tensor& p) {
        auto [v, g] = f(p);
        return std::pair<std::vector<double>, std::vector<Tensor>>{{v}, {std::move(g)}};
    };
    return integrated_gradients_multi(multi, x, baseline, steps).front();
}

std::vector<IgResult> integrated_gradients_multi(const MultiValueGrad& f, const Tensor& x,
                                                 const Tensor& baseline, int steps) {
    check_same_shape("integrated_gradients", x, baseline);
    if (steps < 1) throw std::invalid_argument("integrated_gradients: steps must be >= 1");

    Tensor diff(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) diff[i] = x[i] - baseline[i];

    std::vector<Tensor> grad_sum;
    Tensor point(x.shape());
    for (int s = 1; s <= steps; ++s) {
        const double alpha = (static_cast<double>(s) - 0.5) / static_cast<double>(steps);
        for (std::size_t i = 0; i < x.size(); ++i) point[i] = baseline[i] + alpha * diff[i];
        auto [vals, grads] = f(point);
        if (grad_sum.empty()) {
            for (const auto& g : grads) grad_sum.emplace_back(g.shape(), 0.0);
        }
        if (grads.size() != grad_sum.size()) throw std::logic_error("integrated_gradients: target count changed");
        for (std::size_t k = 0; k < grads.size(); ++k) {
            check_same_shape("integrated_gradients", x, grads[k]);
            for (double v : vals)
                if (!std::isfinite(v)) throw std::domain_error("integrated_gradients: non-finite f along path");
            grad_sum[k].add_scaled(grads[k]);
        }
    }

    const auto at_x = f(x).first;
    const auto at_base = f(baseline).first;
    std::vector<IgResult> out(grad_sum.size());
    for (std::size_t k = 0; k < grad_sum.size(); ++k) {
        IgResult& r = out[k];
        r.attribution = Tensor(x.shape());
        double total = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            r.attribution[i] = diff[i] * (grad_sum[k][i] / static_cast<double>(steps));
            total += r.attribution[i];
        }
        r.f_input = at_x.at(k);
        r.f_baseline = at_base.at(k);
        if (!std::isfinite(r.f_input) || !std::isfinite(r.f_baseline)) {
            throw std::domain_error("integrated_gradients: non-finite f at endpoints");
        }
        r.completeness_gap = std::abs(total - (r.f_input - r.f_baseline));
    }
    return out;
}

}  // namespace mdfm::ad

#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mdfm/autodiff/graph.hpp"
#include "mdfm/autodiff/param_set.hpp"

namespace mdfm::ad {

// Builds a scalar loss on a fresh graph from the given parameters.
using LossBuilder = std::function<Var(Graph&, const ParamSet&)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coords_checked = 0;
};

// Compares reverse-mode gradients against central differences
// (f(x+eps) - f(x-eps)) / (2 eps). The relative error of a coordinate is
// |a - n| / max(|a|, |n|, 1e-8). `coords` restricts the check to the given
// flat indices per tensor; tensors absent from a non-null map are skipped.
// `params` is perturbed in place and restored bit-exactly.
GradCheckResult grad_check(const LossBuilder& build, ParamSet& params, double eps,
                           const std::map<std::string, std::vector<std::size_t>>* coords = nullptr);

// f(x) together with df/dx.
using ValueGrad = std::function<std::pair<double, Tensor>(const Tensor&)>;
// K outputs and their gradients at once, sharing one forward pass.
using MultiValueGrad = std::function<std::pair<std::vector<double>, std::vector<Tensor>>(const Tensor&)>;

struct IgResult {
    Tensor attribution;
    double f_input = 0.0;
    double f_baseline = 0.0;
    // |sum(attribution) - (f(x) - f(baseline))|
    double completeness_gap = 0.0;
};

// Integrated gradients with the Riemann midpoint rule: alphas (i - 0.5)/steps.
IgResult integrated_gradients(const ValueGrad& f, const Tensor& x, const Tensor& baseline, int steps);
std::vector<IgResult> integrated_gradients_multi(const MultiValueGrad& f, const Tensor& x,
                                                 const Tensor& baseline, int steps);

}  // namespace mdfm::ad

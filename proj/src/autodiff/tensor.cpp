#include "mdfm/autodiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mdfm::ad {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
        throw std::invalid_argument("Tensor: shape " + shape_str(shape_) + " does not match " +
                                    std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::row(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({1, n}, std::move(v));
}

std::size_t Tensor::rows() const noexcept {
    if (shape_.size() < 2) return 1;
    std::size_t r = 1;
    for (std::size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
    return r;
}

std::size_t Tensor::cols() const noexcept {
    return shape_.empty() ? 1 : shape_.back();
}

double Tensor::item() const {
    if (data_.size() != 1) {
        throw std::invalid_argument("Tensor::item on tensor of shape " + shape_str(shape_));
    }
    return data_[0];
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(shape_) + " as " +
                                    shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
}

void Tensor::add_scaled(const Tensor& other, double scale) {
    if (other.size() != data_.size()) {
        throw std::invalid_argument("add_scaled: size mismatch " + shape_str(shape_) + " vs " +
                                    shape_str(other.shape()));
    }
    const double* o = other.ptr();
    if (scale == 1.0) {
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o[i];
    } else {
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * o[i];
    }
}

double l2_norm(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data()) s += v * v;
    return std::sqrt(s);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("max_abs_diff: size mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace mdfm::ad

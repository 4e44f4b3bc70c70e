#include "aml/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "aml/error.hpp"

namespace aml {

std::size_t shape_size(const Shape& shape) noexcept {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out += ",";
        }
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), values_(shape_size(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_size(shape_) != values_.size()) {
        throw ShapeError("tensor: shape " + shape_string(shape_) + " needs " +
                         std::to_string(shape_size(shape_)) + " values, got " +
                         std::to_string(values_.size()));
    }
}

Tensor Tensor::filled(Shape shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::vector(std::span<const double> values) {
    return Tensor(Shape{values.size()}, std::vector<double>(values.begin(), values.end()));
}

double Tensor::item() const {
    if (values_.size() != 1) {
        throw ShapeError("item: tensor of shape " + shape_string(shape_) + " is not a scalar");
    }
    return values_[0];
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) noexcept {
    std::fill(values_.begin(), values_.end(), v);
}

Tensor Tensor::reshaped(Shape shape) const {
    return Tensor(std::move(shape), values_);
}

}  // namespace aml

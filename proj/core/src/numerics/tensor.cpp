// SPDX-License-Identifier: Apache-2.0
#include "driftlab/numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "driftlab/error.hpp"

namespace driftlab::numerics {

std::size_t shape_product(const Shape& shape) noexcept {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

namespace {

void validate_shape(const Shape& shape) {
    if (shape.size() > 2) {
        throw DimensionError("tensor rank " + std::to_string(shape.size()) + " is not supported");
    }
    for (std::size_t extent : shape) {
        if (extent == 0) {
            throw DimensionError("tensor extents must be positive");
        }
    }
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape(shape_);
    values_.assign(shape_product(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    validate_shape(shape_);
    if (shape_product(shape_) != values_.size()) {
        throw DimensionError("tensor shape " + shape_string() + " does not match " +
                             std::to_string(values_.size()) + " values");
    }
    if (!all_finite()) {
        throw NumericError("tensor constructed from non-finite values");
    }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor(Shape{rows, cols}, std::move(values));
}

Tensor Tensor::filled(Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.values_.begin(), t.values_.end(), value);
    if (!std::isfinite(value)) {
        throw NumericError("tensor filled with a non-finite value");
    }
    return t;
}

std::size_t Tensor::rows() const noexcept {
    return shape_.size() == 2 ? shape_[0] : 1;
}

std::size_t Tensor::cols() const noexcept {
    if (shape_.empty()) {
        return 1;
    }
    return shape_.back();
}

double Tensor::item() const {
    if (values_.size() != 1) {
        throw DimensionError("item() requires a one-element tensor, got " + shape_string());
    }
    return values_[0];
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
    std::string out = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) {
            out += "x";
        }
        out += std::to_string(shape_[i]);
    }
    return out + "]";
}

}  // namespace driftlab::numerics

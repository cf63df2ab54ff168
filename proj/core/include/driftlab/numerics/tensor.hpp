// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace driftlab::numerics {

using Shape = std::vector<std::size_t>;

/// Dense row-major tensor of 64-bit reals.
///
/// Rank 0 (scalar), 1 and 2 are supported. A rank-1 tensor is treated as a
/// single row wherever matrix semantics are needed. Every stored value is
/// finite; construction from NaN/Inf throws NumericError.
class Tensor {
public:
    Tensor() = default;

    /// Zero-filled tensor of the given shape.
    explicit Tensor(Shape shape);

    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double value);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Tensor filled(Shape shape, double value);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    std::size_t rows() const noexcept;
    std::size_t cols() const noexcept;

    std::span<const double> values() const noexcept { return values_; }
    std::span<double> mutable_values() noexcept { return values_; }
    const double* data() const noexcept { return values_.data(); }
    double* data() noexcept { return values_.data(); }

    double operator[](std::size_t i) const noexcept { return values_[i]; }
    double& operator[](std::size_t i) noexcept { return values_[i]; }

    double operator()(std::size_t r, std::size_t c) const noexcept { return values_[r * cols() + c]; }
    double& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * cols() + c]; }

    /// Scalar value of a one-element tensor.
    double item() const;

    bool all_finite() const noexcept;
    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

    std::string shape_string() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> values_;
};

std::size_t shape_product(const Shape& shape) noexcept;

}  // namespace driftlab::numerics

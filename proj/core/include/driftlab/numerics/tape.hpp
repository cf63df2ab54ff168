// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "driftlab/numerics/tensor.hpp"
#include "driftlab/random.hpp"

namespace driftlab::numerics {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::uint32_t id = 0;

    const Tensor& value() const;
    bool requires_grad() const;
};

/// Reverse-mode autodiff tape.
///
/// Nodes are appended in execution order, so every node's inputs precede it.
/// backward() walks the records once in reverse; a second call without reset()
/// throws, since gradients would be double-counted.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var variable(Tensor value);

    /// Records an op output. `backward` is dropped when no input needs a gradient.
    Var record(Tensor value, bool requires_grad, BackwardFn backward, std::string_view op);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;

    /// Gradient of the last backward() loss w.r.t. `v`; zeros when `v` was unreachable.
    Tensor grad(Var v) const;

    /// Mutable gradient buffer of a node, zero-initialized on first access.
    std::span<double> grad_buffer(std::uint32_t id);
    std::span<const double> grad_of(std::uint32_t id) const;
    bool has_grad(std::uint32_t id) const;

    void backward(Var loss);
    void reset();

    std::size_t size() const noexcept { return nodes_.size(); }
    bool backward_done() const noexcept { return backward_done_; }

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        bool requires_grad = false;
        BackwardFn backward;
    };

    void check_owned(Var v) const;

    // deque keeps value() references valid while later ops are recorded.
    std::deque<Node> nodes_;
    bool backward_done_ = false;
};

/// Row-validity mask: one byte per element, nonzero = keep.
using Mask = std::vector<std::uint8_t>;

// Differentiable primitives. Each records itself on the tape of its inputs.

Var matmul(Var a, Var b);
/// a · bᵀ
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
/// Adds a length-c bias to every row of an r×c matrix.
Var add_row(Var x, Var bias);
Var scale(Var x, double factor);
Var sum(Var x);

/// Softmax over each row; entries with mask==0 are excluded and come out exactly 0.
Var row_softmax(Var x, const Mask& mask = {});
Var layer_norm(Var x, Var gain, Var bias, double epsilon);
Var gelu(Var x);
/// Inverted dropout; identity when !training or rate==0.
Var dropout(Var x, double rate, bool training, Rng& rng);
/// Mean over the batch of -log softmax(logits)[label]; masked logits excluded.
Var cross_entropy(Var logits, std::span<const std::size_t> labels, const Mask& logit_mask = {});

Var slice_rows(Var x, std::size_t begin, std::size_t count);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
Var concat_cols(std::span<const Var> parts);
/// Rows with row_mask==0 are replaced by `fill` (a length-c row).
Var select_rows(Var x, Var fill, const Mask& row_mask);
/// Mean over rows with row_mask!=0, as a 1×c row.
Var masked_mean_rows(Var x, const Mask& row_mask);

/// Exact Gaussian CDF via erf.
double normal_cdf(double x) noexcept;

}  // namespace driftlab::numerics

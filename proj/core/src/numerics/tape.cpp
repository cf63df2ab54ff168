// SPDX-License-Identifier: Apache-2.0
#include "driftlab/numerics/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "driftlab/error.hpp"

namespace driftlab::numerics {

const Tensor& Var::value() const { return tape->value(*this); }
bool Var::requires_grad() const { return tape->requires_grad(*this); }

void Tape::check_owned(Var v) const {
    if (v.tape != this || v.id >= nodes_.size()) {
        throw DataError("variable does not belong to this tape");
    }
}

Var Tape::constant(Tensor value) { return record(std::move(value), false, nullptr, "constant"); }

Var Tape::variable(Tensor value) { return record(std::move(value), true, nullptr, "variable"); }

Var Tape::record(Tensor value, bool requires_grad, BackwardFn backward, std::string_view op) {
    if (!value.all_finite()) {
        throw NumericError("non-finite value produced by " + std::string(op));
    }
    if (nodes_.size() >= std::numeric_limits<std::uint32_t>::max()) {
        throw NumericError("tape capacity exceeded");
    }
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    if (requires_grad) {
        node.backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const {
    check_owned(v);
    return nodes_[v.id].value;
}

bool Tape::requires_grad(Var v) const {
    check_owned(v);
    return nodes_[v.id].requires_grad;
}

Tensor Tape::grad(Var v) const {
    check_owned(v);
    const Node& n = nodes_[v.id];
    if (n.grad.empty()) {
        return Tensor(n.value.shape());
    }
    return Tensor(n.value.shape(), n.grad);
}

std::span<double> Tape::grad_buffer(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) {
        n.grad.assign(n.value.size(), 0.0);
    }
    return n.grad;
}

std::span<const double> Tape::grad_of(std::uint32_t id) const { return nodes_[id].grad; }

bool Tape::has_grad(std::uint32_t id) const { return !nodes_[id].grad.empty(); }

void Tape::backward(Var loss) {
    check_owned(loss);
    if (backward_done_) {
        throw DataError("backward() called twice on the same tape without reset()");
    }
    if (nodes_[loss.id].value.size() != 1) {
        throw DimensionError("backward() requires a scalar loss, got " +
                             nodes_[loss.id].value.shape_string());
    }
    backward_done_ = true;
    if (!nodes_[loss.id].requires_grad) {
        return;
    }
    grad_buffer(loss.id)[0] = 1.0;
    for (std::uint32_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.backward && !n.grad.empty()) {
            n.backward(*this, i);
        }
    }
}

void Tape::reset() {
    nodes_.clear();
    backward_done_ = false;
}

namespace {

Tape& tape_of(Var a) {
    if (a.tape == nullptr) {
        throw DataError("variable is not attached to a tape");
    }
    return *a.tape;
}

Tape& tape_of(Var a, Var b) {
    if (a.tape != b.tape) {
        throw DataError("operands belong to different tapes");
    }
    return tape_of(a);
}

void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + " expects a matrix, got " + t.shape_string());
    }
}

void check_mask(const Mask& mask, std::size_t expected, const char* op) {
    if (!mask.empty() && mask.size() != expected) {
        throw DimensionError(std::string(op) + " mask has " + std::to_string(mask.size()) +
                             " entries, expected " + std::to_string(expected));
    }
}

}  // namespace

Var matmul(Var a, Var b) {
    Tape& tape = tape_of(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require_matrix(A, "matmul");
    require_matrix(B, "matmul");
    const std::size_t r = A.rows(), k = A.cols(), c = B.cols();
    if (B.rows() != k) {
        throw DimensionError("matmul inner extents differ: " + A.shape_string() + " x " + B.shape_string());
    }
    std::vector<double> out(r * c, 0.0);
    const double* pa = A.data();
    const double* pb = B.data();
    for (std::size_t i = 0; i < r; ++i) {
        double* row = out.data() + i * c;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = pa[i * k + p];
            const double* brow = pb + p * c;
            for (std::size_t j = 0; j < c; ++j) {
                row[j] += aip * brow[j];
            }
        }
    }
    const bool rg = a.requires_grad() || b.requires_grad();
    const std::uint32_t ia = a.id, ib = b.id;
    return tape.record(
        Tensor::matrix(r, c, std::move(out)), rg,
        [ia, ib, r, k, c](Tape& t, std::uint32_t self) {
            const std::span<const double> g = t.grad_of(self);
            const double* pa = t.value(Var{&t, ia}).data();
            const double* pb = t.value(Var{&t, ib}).data();
            if (t.requires_grad(Var{&t, ia})) {
                std::span<double> ga = t.grad_buffer(ia);
                for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        const double* brow = pb + p * c;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < c; ++j) {
                            acc += g[i * c + j] * brow[j];
                        }
                        ga[i * k + p] += acc;
                    }
                }
            }
            if (t.requires_grad(Var{&t, ib})) {
                std::span<double> gb = t.grad_buffer(ib);
                for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = pa[i * k + p];
                        double* gbrow = gb.data() + p * c;
                        for (std::size_t j = 0; j < c; ++j) {
                            gbrow[j] += aip * g[i * c + j];
                        }
                    }
                }
            }
        },
        "matmul");
}

Var matmul_nt(Var a, Var b) {
    Tape& tape = tape_of(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require_matrix(A, "matmul_nt");
    require_matrix(B, "matmul_nt");
    const std::size_t r = A.rows(), k = A.cols(), c = B.rows();
    if (B.cols() != k) {
        throw DimensionError("matmul_nt inner extents differ: " + A.shape_string() + " x " +
                             B.shape_string() + "^T");
    }
    std::vector<double> out(r * c, 0.0);
    const double* pa = A.data();
    const double* pb = B.data();
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                acc += pa[i * k + p] * pb[j * k + p];
            }
            out[i * c + j] = acc;
        }
    }
    const bool rg = a.requires_grad() || b.requires_grad();
    const std::uint32_t ia = a.id, ib = b.id;
    return tape.record(
        Tensor::matrix(r, c, std::move(out)), rg,
        [ia, ib, r, k, c](Tape& t, std::uint32_t self) {
            const std::span<const double> g = t.grad_of(self);
            const double* pa = t.value(Var{&t, ia}).data();
            const double* pb = t.value(Var{&t, ib}).data();
            if (t.requires_grad(Var{&t, ia})) {
                std::span<double> ga = t.grad_buffer(ia);
                for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < c; ++j) {
                        const double gij = g[i * c + j];
                        for (std::size_t p = 0; p < k; ++p) {
                            ga[i * k + p] += gij * pb[j * k + p];
                        }
                    }
                }
            }
            if (t.requires_grad(Var{&t, ib})) {
                std::span<double> gb = t.grad_buffer(ib);
                for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < c; ++j) {
                        const double gij = g[i * c + j];
                        for (std::size_t p = 0; p < k; ++p) {
                            gb[j * k + p] += gij * pa[i * k + p];
                        }
                    }
                }
            }
        },
        "matmul_nt");
}

Var add(Var a, Var b) {
    Tape& tape = tape_of(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (!A.same_shape(B)) {
        throw DimensionError("add shape mismatch: " + A.shape_string() + " vs " + B.shape_string());
    }
    std::vector<double> out(A.values().begin(), A.values().end());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += B[i];
    }
    const std::uint32_t ia = a.id, ib = b.id;
    return tape.record(
        Tensor(A.shape(), std::move(out)), a.requires_grad() || b.requires_grad(),
        [ia, ib](Tape& t, std::uint32_t self) {
            const std::span<const double> g = t.grad_of(self);
            for (std::uint32_t in : {ia, ib}) {
                if (t.requires_grad(Var{&t, in})) {
                    std::span<double> gi = t.grad_buffer(in);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        gi[i] += g[i];
                    }
                }
            }
        },
        "add");
}

Var add_row(Var x, Var bias) {
    Tape& tape = tape_of(x, bias);
    const Tensor& X = x.value();
    const Tensor& b = bias.value();
    require_matrix(X, "add_row");
    const std::size_t r = X.rows(), c = X.cols();
    if (b.size() != c) {
        throw DimensionError("add_row bias has " + std::to_string(b.size()) + " entries, expected " +
                             std::to_string(c));
    }
    std::vector<double> out(X.values().begin(), X.values().end());
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] += b[j];
        }
    }
    const std::uint32_t ix = x.id, ib = bias.id;
    return tape.record(
        Tensor::matrix(r, c, std::move(out)), x.requires_grad() || bias.requires_grad(),
        [ix, ib, r, c](Tape& t, std::uint32_t self) {
            const std::span<const double> g = t.grad_of(self);
            if (t.requires_grad(Var{&t, ix})) {
                std::span<double> gx = t.grad_buffer(ix);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gx[i] += g[i];
                }
            }
            if (t.requires_grad(Var{&t, ib})) {
                std::span<double> gb = t.grad_buffer(ib);
                for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < c; ++j) {
                        gb[j] += g[i * c + j];
                    }
                }
            }
        },
        "add_row");
}

Var scale(Var x, double factor) {
    Tape& tape = tape_of(x);
    const Tensor& X = x.value();
    std::vector<double> out(X.values().begin(), X.values().end());
    for (double& v : out) {
        v *= factor;
    }
    const std::uint32_t ix = x.id;
    return tape.record(
        Tensor(X.shape(), std::move(out)), x.requires_grad(),
        [ix, factor](Tape& t, std::uint32_t self) {
            const std::span<const double> g = t.grad_of(self);
            std::span<double> gx = t.grad_buffer(ix);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx[i] += factor * g[i];
            }
        },
        "scale");
}

Var sum(Var x) {
    Tape& tape = tape_of(x);
    double total = 0.0;
    for (double v : x.value().values()) {
        total += v;
    }
    const std::uint32_t ix = x.id;
    return tape.record(
        Tensor::scalar(total), x.requires_grad(),
        [ix](Tape& t, std::uint32_t self) {
            const double g = t.grad_of(self)[0];
            for (double& gi : t.grad_buffer(ix)) {
                gi += g;
            }
        },
        "sum");
}

Var row_softmax(Var x, const Mask& mask) {
    Tape& tape = tape_of(x);
    const Tensor& X = x.value();
    require_matrix(X, "row_softmax");
    const std::size_t r = X.rows(), c = X.cols();
    check_mask(mask, r * c, "row_softmax");
    std::vector<double> out(r * c, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) {
            if (mask.empty() || mask[i * c + j]) {
                mx = std::max(mx, X(i, j));
            }
        }
        if (!std::isfinite(mx)) {
            throw DataError("row_softmax: row " + std::to_string(i) + " is fully masked");
        }
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            if (mask.empty() || mask[i * c + j]) {
                const double e = std::exp(X(i, j) - mx);
                out[i * c + j] = e;
                z += e;
            }
        }
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] /= z;
        }
    }
    const std::uint32_t ix = x.id;
    return tape.record(
        Tensor::matrix(r, c, std::move(out)), x.requires_grad(),
        [ix, r, c](Tape& t, std::uint32_t self) {
            const std::span<const double> g = t.grad_of(self);
            const Tensor& y = t.value(Var{&t, self});
            std::span<double> gx = t.grad_buffer(ix);
            for (std::size_t i = 0; i < r; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    dot += y(i, j) * g[i * c + j];
                }
                for (std::size_t j = 0; j < c; ++j) {
                    gx[i * c + j] += y(i, j) * (g[i * c + j] - dot);
                }
            }
        },
        "row_softmax");
}

Var layer_norm(Var x, Var gain, Var bias, double epsilon) {
    Tape& tape = tape_of(x, gain);
    tape_of(x, bias);
    const Tensor& X = x.value();
    require_matrix(X, "layer_norm");
    const std::size_t r = X.rows(), d = X.cols();
    if (d < 2) {
        throw DimensionError("layer_norm needs at least two features per row");
    }
    if (gain.value().size() != d || bias.value().size() != d) {
        throw DimensionError("layer_norm gain/bias must have " + std::to_string(d) + " entries");
    }
    if (epsilon < 0.0) {
        throw ConfigError("layer_norm epsilon must be nonnegative");
    }
    const Tensor& G = gain.value();
    const Tensor& B = bias.value();
    std::vector<double> normalized(r * d);
    std::vector<double> inv_std(r);
    std::vector<double> out(r * d);
    for (std::size_t i = 0; i < r; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            mean += X(i, j);
        }
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double dv = X(i, j) - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(d);
        const double denom = std::sqrt(var + epsilon);
        if (denom == 0.0) {
            throw NumericError("layer_norm: zero variance row with epsilon = 0");
        }
        inv_std[i] = 1.0 / denom;
        for (std::size_t j = 0; j < d; ++j) {
            const double nh = (X(i, j) - mean) * inv_std[i];
            normalized[i * d + j] = nh;
            out[i * d + j] = nh * G[j] + B[j];
        }
    }
    const std::uint32_t ix = x.id, ig = gain.id, ib = bias.id;
    return tape.record(
        Tensor::matrix(r, d, std::move(out)),
        x.requires_grad() || gain.requires_grad() || bias.requires_grad(),
        [ix, ig, ib, r, d, normalized = std::move(normalized), inv_std = std::move(inv_std)](
            Tape& t, std::uint32_t self) {
            const std::span<const double> g = t.grad_of(self);
            const Tensor& G = t.value(Var{&t, ig});
            if (t.requires_grad(Var{&t, ig})) {
                std::span<double> gg = t.grad_buffer(ig);
                for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < d; ++j) {
                        gg[j] += g[i * d + j] * normalized[i * d + j];
                    }
                }
            }
            if (t.requires_grad(Var{&t, ib})) {
                std::span<double> gb = t.grad_buffer(ib);
                for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < d; ++j) {
                        gb[j] += g[i * d + j];
                    }
                }
            }
            if (t.requires_grad(Var{&t, ix})) {
                std::span<double> gx = t.grad_buffer(ix);
                const double inv_d = 1.0 / static_cast<double>(d);
                for (std::size_t i = 0; i < r; ++i) {
                    double mean_g = 0.0, mean_gx = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double gh = g[i * d + j] * G[j];
                        mean_g += gh;
                        mean_gx += gh * normalized[i * d + j];
                    }
                    mean_g *= inv_d;
                    mean_gx *= inv_d;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double gh = g[i * d + j] * G[j];
                        gx[i * d + j] += inv_std[i] * (gh - mean_g - normalized[i * d + j] * mean_gx);
                    }
                }
            }
        },
        "layer_norm");
}

double normal_cdf(double x) noexcept { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

Var gelu(Var x) {
    Tape& tape = tape_of(x);
    const Tensor& X = x.value();
    std::vector<double> out(X.size());
    for (std::size_t i = 0; i < X.size(); ++i) {
        out[i] = X[i] * normal_cdf(X[i]);
    }
    const std::uint32_t ix = x.id;
    return tape.record(
        Tensor(X.shape(), std::move(out)), x.requires_grad(),
        [ix](Tape& t, std::uint32_t self) {
            const std::span<const double> g = t.grad_of(self);
            const Tensor& X = t.value(Var{&t, ix});
            std::span<double> gx = t.grad_buffer(ix);
            const double inv_sqrt_2pi = std::numbers::inv_sqrtpi / std::numbers::sqrt2;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = X[i];
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                gx[i] += g[i] * (normal_cdf(v) + v * pdf);
            }
        },
        "gelu");
}

Var dropout(Var x, double rate, bool training, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ConfigError("dropout rate must lie in [0, 1)");
    }
    if (!training || rate == 0.0) {
        return x;
    }
    Tape& tape = tape_of(x);
    const Tensor& X = x.value();
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> factors(X.size());
    std::bernoulli_distribution keep(1.0 - rate);
    for (double& f : factors) {
        f = keep(rng) ? keep_scale : 0.0;
    }
    std::vector<double> out(X.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = X[i] * factors[i];
    }
    const std::uint32_t ix = x.id;
    return tape.record(
        Tensor(X.shape(), std::move(out)), x.requires_grad(),
        [ix, factors = std::move(factors)](Tape& t, std::uint32_t self) {
            const std::span<const double> g = t.grad_of(self);
            std::span<double> gx = t.grad_buffer(ix);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx[i] += g[i] * factors[i];
            }
        },
        "dropout");
}

Var cross_entropy(Var logits, std::span<const std::size_t> labels, const Mask& logit_mask) {
    Tape& tape = tape_of(logits);
    const Tensor& L = logits.value();
    require_matrix(L, "cross_entropy");
    const std::size_t batch = L.rows(), classes = L.cols();
    if (labels.size() != batch) {
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                             std::to_string(batch));
    }
    check_mask(logit_mask, batch * classes, "cross_entropy");
    auto active = [&](std::size_t i, std::size_t j) {
        return logit_mask.empty() || logit_mask[i * classes + j] != 0;
    };
    std::vector<double> probs(batch * classes, 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t y = labels[i];
        if (y >= classes) {
            throw DataError("cross_entropy: label " + std::to_string(y) + " out of range [0, " +
                            std::to_string(classes) + ")");
        }
        if (!active(i, y)) {
            throw DataError("cross_entropy: label " + std::to_string(y) + " sits at a masked position");
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < classes; ++j) {
            if (active(i, j)) {
                mx = std::max(mx, L(i, j));
            }
        }
        double z = 0.0;
        for (std::size_t j = 0; j < classes; ++j) {
            if (active(i, j)) {
                z += std::exp(L(i, j) - mx);
            }
        }
        const double log_z = mx + std::log(z);
        for (std::size_t j = 0; j < classes; ++j) {
            if (active(i, j)) {
                probs[i * classes + j] = std::exp(L(i, j) - log_z);
            }
        }
        loss += log_z - L(i, y);
    }
    loss /= static_cast<double>(batch);
    std::vector<std::size_t> label_copy(labels.begin(), labels.end());
    const std::uint32_t il = logits.id;
    return tape.record(
        Tensor::scalar(loss), logits.requires_grad(),
        [il, batch, classes, probs = std::move(probs), label_copy = std::move(label_copy)](
            Tape& t, std::uint32_t self) {
            const double g = t.grad_of(self)[0] / static_cast<double>(batch);
            std::span<double> gl = t.grad_buffer(il);
            for (std::size_t i = 0; i < batch; ++i) {
                for (std::size_t j = 0; j < classes; ++j) {
                    const double target = (j == label_copy[i]) ? 1.0 : 0.0;
                    const double p = probs[i * classes + j];
                    // masked classes have p == 0 and are never the label
                    if (p != 0.0 || target != 0.0) {
                        gl[i * classes + j] += g * (p - target);
                    }
                }
            }
        },
        "cross_entropy");
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
    Tape& tape = tape_of(x);
    const Tensor& X = x.value();
    require_matrix(X, "slice_rows");
    const std::size_t c = X.cols();
    if (count == 0 || begin + count > X.rows()) {
        throw DimensionError("slice_rows out of range");
    }
    std::vector<double> out(X.data() + begin * c, X.data() + (begin + count) * c);
    const std::uint32_t ix = x.id;
    return tape.record(
        Tensor::matrix(count, c, std::move(out)), x.requires_grad(),
        [ix, begin, c](Tape& t, std::uint32_t self) {
            const std::span<const double> g = t.grad_of(self);
            std::span<double> gx = t.grad_buffer(ix);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx[begin * c + i] += g[i];
            }
        },
        "slice_rows");
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
    Tape& tape = tape_of(x);
    const Tensor& X = x.value();
    require_matrix(X, "slice_cols");
    const std::size_t r = X.rows(), c = X.cols();
    if (count == 0 || begin + count > c) {
        throw DimensionError("slice_cols out of range");
    }
    std::vector<double> out(r * count);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < count; ++j) {
            out[i * count + j] = X(i, begin + j);
        }
    }
    const std::uint32_t ix = x.id;
    return tape.record(
        Tensor::matrix(r, count, std::move(out)), x.requires_grad(),
        [ix, begin, count, r, c](Tape& t, std::uint32_t self) {
            const std::span<const double> g = t.grad_of(self);
            std::span<double> gx = t.grad_buffer(ix);
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < count; ++j) {
                    gx[i * c + begin + j] += g[i * count + j];
                }
            }
        },
        "slice_cols");
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) {
        throw DimensionError("concat_cols needs at least one part");
    }
    Tape& tape = tape_of(parts[0]);
    const std::size_t r = parts[0].value().rows();
    std::vector<std::uint32_t> ids;
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    bool rg = false;
    for (const Var& p : parts) {
        tape_of(parts[0], p);
        require_matrix(p.value(), "concat_cols");
        if (p.value().rows() != r) {
            throw DimensionError("concat_cols row counts differ");
        }
        ids.push_back(p.id);
        widths.push_back(p.value().cols());
        total += p.value().cols();
        rg = rg || p.requires_grad();
    }
    std::vector<double> out(r * total);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& P = parts[k].value();
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < widths[k]; ++j) {
                out[i * total + offset + j] = P(i, j);
            }
        }
        offset += widths[k];
    }
    return tape.record(
        Tensor::matrix(r, total, std::move(out)), rg,
        [ids = std::move(ids), widths = std::move(widths), r, total](Tape& t, std::uint32_t self) {
            const std::span<const double> g = t.grad_of(self);
            std::size_t offset = 0;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                if (t.requires_grad(Var{&t, ids[k]})) {
                    std::span<double> gp = t.grad_buffer(ids[k]);
                    for (std::size_t i = 0; i < r; ++i) {
                        for (std::size_t j = 0; j < widths[k]; ++j) {
                            gp[i * widths[k] + j] += g[i * total + offset + j];
                        }
                    }
                }
                offset += widths[k];
            }
        },
        "concat_cols");
}

Var select_rows(Var x, Var fill, const Mask& row_mask) {
    Tape& tape = tape_of(x, fill);
    const Tensor& X = x.value();
    require_matrix(X, "select_rows");
    const std::size_t r = X.rows(), c = X.cols();
    if (fill.value().size() != c) {
        throw DimensionError("select_rows fill row has wrong width");
    }
    check_mask(row_mask, r, "select_rows");
    if (row_mask.empty()) {
        return x;
    }
    const Tensor& F = fill.value();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] = row_mask[i] ? X(i, j) : F[j];
        }
    }
    const std::uint32_t ix = x.id, ifl = fill.id;
    return tape.record(
        Tensor::matrix(r, c, std::move(out)), x.requires_grad() || fill.requires_grad(),
        [ix, ifl, r, c, row_mask](Tape& t, std::uint32_t self) {
            const std::span<const double> g = t.grad_of(self);
            const bool gx_needed = t.requires_grad(Var{&t, ix});
            const bool gf_needed = t.requires_grad(Var{&t, ifl});
            for (std::size_t i = 0; i < r; ++i) {
                if (row_mask[i] && gx_needed) {
                    std::span<double> gx = t.grad_buffer(ix);
                    for (std::size_t j = 0; j < c; ++j) {
                        gx[i * c + j] += g[i * c + j];
                    }
                } else if (!row_mask[i] && gf_needed) {
                    std::span<double> gf = t.grad_buffer(ifl);
                    for (std::size_t j = 0; j < c; ++j) {
                        gf[j] += g[i * c + j];
                    }
                }
            }
        },
        "select_rows");
}

Var masked_mean_rows(Var x, const Mask& row_mask) {
    Tape& tape = tape_of(x);
    const Tensor& X = x.value();
    require_matrix(X, "masked_mean_rows");
    const std::size_t r = X.rows(), c = X.cols();
    check_mask(row_mask, r, "masked_mean_rows");
    Mask mask = row_mask.empty() ? Mask(r, 1) : row_mask;
    const auto count = static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto m) { return m != 0; }));
    if (count == 0) {
        throw DataError("masked_mean_rows: no valid rows");
    }
    const double inv = 1.0 / static_cast<double>(count);
    std::vector<double> out(c, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
        if (mask[i]) {
            for (std::size_t j = 0; j < c; ++j) {
                out[j] += X(i, j);
            }
        }
    }
    for (double& v : out) {
        v *= inv;
    }
    const std::uint32_t ix = x.id;
    return tape.record(
        Tensor::matrix(1, c, std::move(out)), x.requires_grad(),
        [ix, r, c, inv, mask = std::move(mask)](Tape& t, std::uint32_t self) {
            const std::span<const double> g = t.grad_of(self);
            std::span<double> gx = t.grad_buffer(ix);
            for (std::size_t i = 0; i < r; ++i) {
                if (mask[i]) {
                    for (std::size_t j = 0; j < c; ++j) {
                        gx[i * c + j] += g[j] * inv;
                    }
                }
            }
        },
        "masked_mean_rows");
}

}  // namespace driftlab::numerics

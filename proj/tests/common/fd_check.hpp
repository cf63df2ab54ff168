// SPDX-License-Identifier: Apache-2.0
// Central finite-difference gradient checking shared by the unit and acceptance suites.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "driftlab/numerics/tape.hpp"
#include "driftlab/random.hpp"

namespace fdcheck {

using driftlab::numerics::Tape;
using driftlab::numerics::Tensor;
using driftlab::numerics::Var;

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

inline double rel_error(double a, double b) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-6});
}

inline Tensor random_tensor(driftlab::numerics::Shape shape, driftlab::Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.mutable_values()) v = driftlab::uniform(rng, lo, hi);
    return t;
}

/// Reduces any matrix output to a scalar through a fixed random projection so
/// every output entry carries a distinct weight.
inline Var weighted_sum(Var out) {
    Tape& tape = *out.tape;
    const Tensor& v = out.value();
    if (v.size() == 1) return driftlab::numerics::sum(out);
    driftlab::Rng rng(v.size() * 7919 + v.cols());
    Tensor w({v.cols(), 1});
    for (double& x : w.mutable_values()) x = driftlab::uniform(rng, -1.0, 1.0);
    return driftlab::numerics::sum(driftlab::numerics::matmul(out, tape.constant(w)));
}

inline double evaluate(const Builder& build, const std::vector<Tensor>& inputs) {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
    return weighted_sum(build(tape, vars)).value().item();
}

/// Largest relative error between reverse-mode and central-difference gradients
/// over every entry of every input.
inline double max_gradient_error(const Builder& build, std::vector<Tensor> inputs, double h = 1e-5) {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
    const Var loss = weighted_sum(build(tape, vars));
    tape.backward(loss);

    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor analytic = tape.grad(vars[k]);
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double orig = inputs[k][i];
            inputs[k][i] = orig + h;
            const double up = evaluate(build, inputs);
            inputs[k][i] = orig - h;
            const double down = evaluate(build, inputs);
            inputs[k][i] = orig;
            worst = std::max(worst, rel_error(analytic[i], (up - down) / (2.0 * h)));
        }
    }
    return worst;
}

}  // namespace fdcheck

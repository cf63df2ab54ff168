// SPDX-License-Identifier: Apache-2.0
#include "driftlab/numerics/adam.hpp"

#include <cmath>
#include <string>

#include "driftlab/error.hpp"

namespace driftlab::numerics {

namespace {

void validate(const AdamConfig& c) {
    if (!(c.learning_rate > 0.0) || !(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0) ||
        !(c.epsilon > 0.0)) {
        throw ConfigError("invalid Adam hyperparameters");
    }
}

}  // namespace

AdamState::AdamState(AdamConfig config, std::span<const Tensor> params) : config_(config) {
    validate(config_);
    first_.reserve(params.size());
    second_.reserve(params.size());
    for (const Tensor& p : params) {
        first_.emplace_back(p.shape());
        second_.emplace_back(p.shape());
    }
}

AdamState::AdamState(AdamConfig config, std::vector<Tensor> first, std::vector<Tensor> second, std::uint64_t step)
    : config_(config), first_(std::move(first)), second_(std::move(second)), step_(step) {
    validate(config_);
    if (first_.size() != second_.size()) {
        throw DimensionError("Adam moment buffers disagree in count");
    }
    for (std::size_t i = 0; i < first_.size(); ++i) {
        if (!first_[i].same_shape(second_[i])) {
            throw DimensionError("Adam moment buffers disagree in shape");
        }
    }
}

void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.first_.size()) {
        throw DimensionError("adam_step: parameter/gradient/state counts differ");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (!params[k].same_shape(grads[k]) || !params[k].same_shape(state.first_[k])) {
            throw DimensionError("adam_step: shape mismatch for parameter " + std::to_string(k));
        }
    }
    const AdamConfig& c = state.config_;
    state.step_ += 1;
    const double t = static_cast<double>(state.step_);
    const double bias1 = 1.0 - std::pow(c.beta1, t);
    const double bias2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        double* p = params[k].data();
        const double* g = grads[k].data();
        double* m = state.first_[k].data();
        double* v = state.second_[k].data();
        for (std::size_t i = 0; i < params[k].size(); ++i) {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bias1;
            const double v_hat = v[i] / bias2;
            p[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
        }
        if (!params[k].all_finite()) {
            throw NumericError("adam_step produced a non-finite parameter");
        }
    }
}

}  // namespace driftlab::numerics

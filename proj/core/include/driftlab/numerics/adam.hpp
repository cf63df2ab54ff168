// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "driftlab/numerics/tensor.hpp"

namespace driftlab::numerics {

struct AdamConfig {
    double learning_rate = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Moment buffers for bias-corrected Adam, one pair per parameter tensor.
class AdamState {
public:
    AdamState() = default;
    AdamState(AdamConfig config, std::span<const Tensor> params);

    /// Restores a saved state; moment shapes must match `params`.
    AdamState(AdamConfig config, std::vector<Tensor> first, std::vector<Tensor> second, std::uint64_t step);

    const AdamConfig& config() const noexcept { return config_; }
    std::uint64_t step() const noexcept { return step_; }
    const std::vector<Tensor>& first_moments() const noexcept { return first_; }
    const std::vector<Tensor>& second_moments() const noexcept { return second_; }

    friend void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state);

private:
    AdamConfig config_;
    std::vector<Tensor> first_;
    std::vector<Tensor> second_;
    std::uint64_t step_ = 0;
};

/// One Adam update of `params` in place.
void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state);

}  // namespace driftlab::numerics

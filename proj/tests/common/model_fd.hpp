// SPDX-License-Identifier: Apache-2.0
// Finite-difference sweep over every parameter of a (tiny) model.
#pragma once

#include "driftlab/model/model.hpp"
#include "fd_check.hpp"

namespace fdcheck {

inline double model_loss(const driftlab::tokenizer::PaddedSequence& seq, const driftlab::model::ModelParams& p,
                         const driftlab::model::ModelConfig& cfg, std::uint64_t dropout_seed) {
    driftlab::Rng rng(dropout_seed);
    return driftlab::model::example_gradient(seq, p, cfg, true, &rng).loss;
}

inline double max_model_gradient_error(const driftlab::tokenizer::PaddedSequence& seq,
                                       driftlab::model::ModelParams params, const driftlab::model::ModelConfig& cfg,
                                       std::uint64_t dropout_seed = 5, double h = 1e-5) {
    driftlab::Rng rng(dropout_seed);
    const auto analytic = driftlab::model::example_gradient(seq, params, cfg, true, &rng);
    double worst = 0.0;
    for (std::size_t k = 0; k < driftlab::model::kParamCount; ++k) {
        for (std::size_t i = 0; i < params.tensors[k].size(); ++i) {
            const double orig = params.tensors[k][i];
            params.tensors[k][i] = orig + h;
            const double up = model_loss(seq, params, cfg, dropout_seed);
            params.tensors[k][i] = orig - h;
            const double down = model_loss(seq, params, cfg, dropout_seed);
            params.tensors[k][i] = orig;
            worst = std::max(worst, rel_error(analytic.grads[k][i], (up - down) / (2.0 * h)));
        }
    }
    return worst;
}

inline driftlab::tokenizer::TokenSequence random_sequence(std::size_t len, std::size_t label, driftlab::Rng& rng) {
    driftlab::tokenizer::TokenSequence s;
    const auto token = [&] {
        std::vector<double> v(7);
        for (double& x : v) x = std::exp(driftlab::uniform(rng, -4.0, 1.0));
        std::sort(v.begin() + 2, v.end());  // keeps the order-statistic fields plausible
        return driftlab::tokenizer::FeatureToken::from_array(v);
    };
    s.context = token();
    for (std::size_t i = 0; i < len; ++i) s.tokens.push_back(token());
    s.label = label;
    return s;
}

}  // namespace fdcheck

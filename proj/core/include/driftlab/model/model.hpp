// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "driftlab/numerics/adam.hpp"
#include "driftlab/numerics/tape.hpp"
#include "driftlab/numerics/tensor.hpp"
#include "driftlab/random.hpp"
#include "driftlab/tokenizer/tokenizer.hpp"

namespace driftlab::model {

enum class Ablation { kFull, kNoPe, kNoGmsa, kNoCmsa, kVanillaHead };

std::string_view to_string(Ablation a) noexcept;
Ablation parse_ablation(std::string_view name);

struct ModelConfig {
    std::size_t d_model = 64;
    std::size_t heads = 4;
    double dropout = 0.1;
    std::size_t hidden = 128;
    std::size_t max_len = 20;
    Ablation ablation = Ablation::kFull;

    void validate() const;
    std::size_t head_dim() const noexcept { return d_model / heads; }
    std::size_t classes() const noexcept { return max_len + 1; }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class ParamId : std::size_t {
    kInputWeight,
    kInputBias,
    kPadEmbedding,
    kGlobalQuery,
    kGlobalKey,
    kGlobalValue,
    kGlobalOut,
    kContextQuery,
    kContextKey,
    kContextValue,
    kContextOut,
    kHeadWeight1,
    kHeadBias1,
    kNormGain,
    kNormBias,
    kHeadWeight2,
    kHeadBias2,
    kCount
};

inline constexpr std::size_t kParamCount = static_cast<std::size_t>(ParamId::kCount);

std::string_view param_name(ParamId id) noexcept;

/// Learnable weights. The G-MSA projections hold all heads side by side:
/// head h owns columns [h*d_k, (h+1)*d_k). Every variant carries every tensor.
struct ModelParams {
    std::array<numerics::Tensor, kParamCount> tensors;

    numerics::Tensor& operator[](ParamId id) noexcept { return tensors[static_cast<std::size_t>(id)]; }
    const numerics::Tensor& operator[](ParamId id) const noexcept { return tensors[static_cast<std::size_t>(id)]; }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

std::vector<numerics::Shape> param_shapes(const ModelConfig& cfg);

/// Glorot-uniform matrices, zero biases, unit layer-norm gain.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Fixed sinusoidal table, (max_len + 1) × d_model.
numerics::Tensor positional_encoding(std::size_t positions, std::size_t d_model);

/// Monotone squashing applied to raw token statistics before the input projection.
double squash_feature(double v) noexcept;

struct DriftPrediction {
    std::vector<double> probs;
    std::size_t label = 0;
    double confidence = 0.0;
};

/// Intermediate nodes of one forward pass, all on the caller's tape.
struct Graph {
    std::array<numerics::Var, kParamCount> params;
    numerics::Var embedded;                    // H^pos
    std::vector<numerics::Var> global_attention;  // per head, (T+1)×(T+1)
    numerics::Var global_out;                  // (T+1)×d_model
    std::optional<numerics::Var> context_attention;  // 1×T, absent on cold start
    numerics::Var context_out;                 // 1×d_model
    numerics::Var fused;                       // 1×2d_model
    numerics::Var logits;                      // 1×(T+1)
    numerics::Mask key_mask;
    numerics::Mask logit_mask;
    bool cold_start = false;
};

/// Records the network on `tape`. Parameters enter as variables when
/// `trainable`, constants otherwise. `rng` is only consulted for dropout.
Graph build_graph(numerics::Tape& tape, const ModelParams& params, const ModelConfig& cfg,
                  const tokenizer::PaddedSequence& seq, bool training, Rng* rng, bool trainable);

DriftPrediction predict_from_logits(std::span<const double> logits, const numerics::Mask& logit_mask);

DriftPrediction forward(const tokenizer::PaddedSequence& seq, const ModelParams& params, const ModelConfig& cfg);
DriftPrediction forward(const tokenizer::TokenSequence& seq, const ModelParams& params, const ModelConfig& cfg);

/// Cross-entropy of one example and the gradient of every parameter.
struct ExampleGradient {
    double loss = 0.0;
    std::array<numerics::Tensor, kParamCount> grads;
};

ExampleGradient example_gradient(const tokenizer::PaddedSequence& seq, const ModelParams& params,
                                 const ModelConfig& cfg, bool training, Rng* rng);

struct TrainConfig {
    std::size_t batch_size = 32;
    double learning_rate = 5e-4;
    std::size_t epochs = 50;
    std::uint64_t seed = 0;
    /// 0 = as many as DRIFTLAB_THREADS allows.
    std::size_t threads = 1;

    void validate() const;
};

/// Everything needed to continue training exactly where it stopped.
struct TrainingState {
    std::size_t epochs_done = 0;
    std::vector<double> epoch_losses;
    numerics::AdamState adam;
};

struct Checkpoint {
    ModelConfig config;
    ModelParams params;
    std::optional<TrainingState> training;
};

/// Trains until `tcfg.epochs` epochs are done in total. Passing a checkpoint
/// with training state resumes it; the loss history is carried over.
Checkpoint train(std::span<const tokenizer::TokenSequence> dataset, const TrainConfig& tcfg, const ModelConfig& mcfg,
                 std::optional<Checkpoint> resume = std::nullopt);

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// C-MSA softmax row over tokens 1..valid_len at inference.
std::vector<double> attention_weights(const tokenizer::TokenSequence& seq, const ModelParams& params,
                                      const ModelConfig& cfg);

enum class TokenRole { kContext, kPreDrift, kPostDrift, kPad };

struct TokenEmbeddings {
    numerics::Tensor rows;  // (T+1) × d_model G-MSA outputs
    std::vector<TokenRole> roles;
};

TokenEmbeddings token_embeddings(const tokenizer::TokenSequence& seq, const ModelParams& params,
                                 const ModelConfig& cfg);

}  // namespace driftlab::model

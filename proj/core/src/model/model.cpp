// SPDX-License-Identifier: Apache-2.0
#include "driftlab/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "driftlab/error.hpp"
#include "driftlab/parallel.hpp"

namespace driftlab::model {

using numerics::Mask;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

namespace {

constexpr double kLayerNormEps = 1e-5;

Tensor zeros_row(std::size_t c) { return Tensor::matrix(1, c, std::vector<double>(c, 0.0)); }

}  // namespace

std::string_view to_string(Ablation a) noexcept {
    switch (a) {
        case Ablation::kFull: return "full";
        case Ablation::kNoPe: return "no_pe";
        case Ablation::kNoGmsa: return "no_gmsa";
        case Ablation::kNoCmsa: return "no_cmsa";
        case Ablation::kVanillaHead: return "vanilla_head";
    }
    return "unknown";
}

Ablation parse_ablation(std::string_view name) {
    for (Ablation a : {Ablation::kFull, Ablation::kNoPe, Ablation::kNoGmsa, Ablation::kNoCmsa, Ablation::kVanillaHead}) {
        if (to_string(a) == name) return a;
    }
    throw ConfigError("unknown ablation variant: " + std::string(name));
}

void ModelConfig::validate() const {
    if (d_model == 0 || heads == 0) throw ConfigError("d_model and heads must be positive");
    if (d_model % heads != 0) throw ConfigError("d_model must be divisible by the head count");
    if (hidden < 2) throw ConfigError("head hidden width must be at least 2");
    if (max_len < 2) throw ConfigError("max sequence length must be at least 2");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
}

std::string_view param_name(ParamId id) noexcept {
    static constexpr std::array<std::string_view, kParamCount> names = {
        "input_weight",  "input_bias",    "pad_embedding", "global_query", "global_key",  "global_value",
        "global_out",    "context_query", "context_key",   "context_value", "context_out", "head_weight1",
        "head_bias1",    "norm_gain",     "norm_bias",     "head_weight2", "head_bias2"};
    const auto i = static_cast<std::size_t>(id);
    return i < kParamCount ? names[i] : "unknown";
}

std::vector<numerics::Shape> param_shapes(const ModelConfig& cfg) {
    const std::size_t d = cfg.d_model, h = cfg.hidden, c = cfg.classes();
    return {{tokenizer::kFeatureCount, d}, {d}, {d}, {d, d}, {d, d}, {d, d}, {d, d}, {d, d}, {d, d}, {d, d},
            {d, d}, {2 * d, h}, {h}, {h}, {h}, {h, c}, {c}};
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const auto shapes = param_shapes(cfg);
    Rng rng(seed);
    ModelParams p;
    for (std::size_t i = 0; i < kParamCount; ++i) {
        const auto id = static_cast<ParamId>(i);
        const numerics::Shape& s = shapes[i];
        Tensor t(s);
        if (s.size() == 2 || id == ParamId::kPadEmbedding) {
            const double fan_in = s.size() == 2 ? static_cast<double>(s[0]) : 1.0;
            const double fan_out = static_cast<double>(s.back());
            const double limit = std::sqrt(6.0 / (fan_in + fan_out));
            for (double& v : t.mutable_values()) v = uniform(rng, -limit, limit);
        } else if (id == ParamId::kNormGain) {
            t = Tensor::filled(s, 1.0);
        }
        p.tensors[i] = std::move(t);
    }
    return p;
}

Tensor positional_encoding(std::size_t positions, std::size_t d_model) {
    std::vector<double> v(positions * d_model);
    for (std::size_t pos = 0; pos < positions; ++pos) {
        for (std::size_t j = 0; j < d_model; ++j) {
            const double freq = std::pow(10000.0, -static_cast<double>(j - j % 2) / static_cast<double>(d_model));
            const double angle = static_cast<double>(pos) * freq;
            v[pos * d_model + j] = j % 2 == 0 ? std::sin(angle) : std::cos(angle);
        }
    }
    return Tensor::matrix(positions, d_model, std::move(v));
}

double squash_feature(double v) noexcept {
    // Errors span several decades; a signed log keeps small windows distinguishable.
    return std::copysign(std::log1p(std::fabs(v) * 1e3), v) / 4.0;
}

Graph build_graph(Tape& tape, const ModelParams& params, const ModelConfig& cfg, const tokenizer::PaddedSequence& seq,
                  bool training, Rng* rng, bool trainable) {
    cfg.validate();
    const std::size_t rows = cfg.classes();
    const std::size_t d = cfg.d_model;
    if (seq.features.rows() != rows || seq.features.cols() != tokenizer::kFeatureCount || seq.mask.size() != rows) {
        throw DimensionError("sequence is padded to " + seq.features.shape_string() + ", model expects " +
                             std::to_string(rows) + " positions");
    }
    if (!seq.mask[0]) throw DataError("context position must be valid");
    if (training && cfg.dropout > 0.0 && rng == nullptr) throw ConfigError("training forward pass needs an rng");

    Graph g;
    const auto shapes = param_shapes(cfg);
    for (std::size_t i = 0; i < kParamCount; ++i) {
        if (params.tensors[i].shape() != shapes[i]) {
            throw DimensionError(std::string(param_name(static_cast<ParamId>(i))) + " has shape " +
                                 params.tensors[i].shape_string() + " which does not match the config");
        }
        g.params[i] = trainable ? tape.variable(params.tensors[i]) : tape.constant(params.tensors[i]);
    }
    const auto P = [&](ParamId id) { return g.params[static_cast<std::size_t>(id)]; };

    g.key_mask = seq.mask;
    const std::size_t valid_len = seq.valid_len;

    // Embedding
    std::vector<double> squashed(seq.features.values().begin(), seq.features.values().end());
    for (double& v : squashed) v = squash_feature(v);
    const Var x = tape.constant(Tensor::matrix(rows, tokenizer::kFeatureCount, std::move(squashed)));
    Var h = numerics::add_row(numerics::matmul(x, P(ParamId::kInputWeight)), P(ParamId::kInputBias));
    h = numerics::select_rows(h, P(ParamId::kPadEmbedding), g.key_mask);
    if (cfg.ablation != Ablation::kNoPe) h = numerics::add(h, tape.constant(positional_encoding(rows, d)));
    g.embedded = h;

    // G-MSA over all positions; PAD keys are masked for every query row.
    Mask attn_mask(rows * rows);
    for (std::size_t r = 0; r < rows; ++r) std::copy(g.key_mask.begin(), g.key_mask.end(), attn_mask.begin() + static_cast<std::ptrdiff_t>(r * rows));
    const std::size_t dk = cfg.head_dim();
    const Var q = numerics::matmul(h, P(ParamId::kGlobalQuery));
    const Var k = numerics::matmul(h, P(ParamId::kGlobalKey));
    const Var v = numerics::matmul(h, P(ParamId::kGlobalValue));
    std::vector<Var> heads;
    for (std::size_t i = 0; i < cfg.heads; ++i) {
        const Var qi = numerics::slice_cols(q, i * dk, dk);
        const Var ki = numerics::slice_cols(k, i * dk, dk);
        const Var vi = numerics::slice_cols(v, i * dk, dk);
        const Var scores = numerics::scale(numerics::matmul_nt(qi, ki), 1.0 / std::sqrt(static_cast<double>(dk)));
        const Var attn = numerics::row_softmax(scores, attn_mask);
        g.global_attention.push_back(attn);
        heads.push_back(numerics::matmul(attn, vi));
    }
    g.global_out = numerics::matmul(numerics::concat_cols(heads), P(ParamId::kGlobalOut));

    // C-MSA: the context token is the only query.
    if (valid_len == 0) {
        g.cold_start = true;
        g.context_out = tape.constant(zeros_row(d));
    } else {
        const std::size_t t = rows - 1;
        const Var h0 = numerics::slice_rows(h, 0, 1);
        const Var tokens = numerics::slice_rows(h, 1, t);
        const Var cq = numerics::matmul(h0, P(ParamId::kContextQuery));
        const Var ck = numerics::matmul(tokens, P(ParamId::kContextKey));
        const Var cv = numerics::matmul(tokens, P(ParamId::kContextValue));
        const Mask token_mask(g.key_mask.begin() + 1, g.key_mask.end());
        const Var scores = numerics::scale(numerics::matmul_nt(cq, ck), 1.0 / std::sqrt(static_cast<double>(d)));
        const Var attn = numerics::row_softmax(scores, token_mask);
        g.context_attention = attn;
        g.context_out = numerics::matmul(numerics::matmul(attn, cv), P(ParamId::kContextOut));
    }

    // Fusion keeps width 2·d in every variant so the head shapes never change.
    const Var g_mean = cfg.ablation == Ablation::kNoGmsa ? tape.constant(zeros_row(d))
                                                         : numerics::masked_mean_rows(g.global_out, g.key_mask);
    const Var c_part = cfg.ablation == Ablation::kNoCmsa ? tape.constant(zeros_row(d)) : g.context_out;
    const std::array<Var, 2> parts{g_mean, c_part};
    g.fused = numerics::concat_cols(parts);

    // Classification head
    Var a = numerics::add_row(numerics::matmul(g.fused, P(ParamId::kHeadWeight1)), P(ParamId::kHeadBias1));
    a = numerics::gelu(a);
    if (training && cfg.dropout > 0.0) a = numerics::dropout(a, cfg.dropout, true, *rng);
    a = numerics::layer_norm(a, P(ParamId::kNormGain), P(ParamId::kNormBias), kLayerNormEps);
    g.logits = numerics::add_row(numerics::matmul(a, P(ParamId::kHeadWeight2)), P(ParamId::kHeadBias2));

    g.logit_mask.assign(rows, 1);
    if (cfg.ablation != Ablation::kVanillaHead) {
        for (std::size_t c = valid_len + 1; c < rows; ++c) g.logit_mask[c] = 0;
    }
    return g;
}

DriftPrediction predict_from_logits(std::span<const double> logits, const Mask& logit_mask) {
    DriftPrediction p;
    p.probs.assign(logits.size(), 0.0);
    double mx = -INFINITY;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (logit_mask.empty() || logit_mask[i]) mx = std::max(mx, logits[i]);
    }
    if (!std::isfinite(mx)) throw DataError("no active classes");
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (logit_mask.empty() || logit_mask[i]) {
            p.probs[i] = std::exp(logits[i] - mx);
            z += p.probs[i];
        }
    }
    for (double& v : p.probs) v /= z;
    const auto best = std::max_element(p.probs.begin(), p.probs.end());
    p.label = static_cast<std::size_t>(best - p.probs.begin());
    p.confidence = *best;
    return p;
}

DriftPrediction forward(const tokenizer::PaddedSequence& seq, const ModelParams& params, const ModelConfig& cfg) {
    Tape tape;
    const Graph g = build_graph(tape, params, cfg, seq, false, nullptr, false);
    return predict_from_logits(g.logits.value().values(), g.logit_mask);
}

DriftPrediction forward(const tokenizer::TokenSequence& seq, const ModelParams& params, const ModelConfig& cfg) {
    return forward(tokenizer::pad(seq, cfg.max_len), params, cfg);
}

ExampleGradient example_gradient(const tokenizer::PaddedSequence& seq, const ModelParams& params,
                                 const ModelConfig& cfg, bool training, Rng* rng) {
    Tape tape;
    const Graph g = build_graph(tape, params, cfg, seq, training, rng, true);
    const std::array<std::size_t, 1> label{seq.label};
    const Var loss = numerics::cross_entropy(g.logits, label, g.logit_mask);
    tape.backward(loss);
    ExampleGradient out;
    out.loss = loss.value().item();
    for (std::size_t i = 0; i < kParamCount; ++i) out.grads[i] = tape.grad(g.params[i]);
    return out;
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
}

Checkpoint train(std::span<const tokenizer::TokenSequence> dataset, const TrainConfig& tcfg, const ModelConfig& mcfg,
                 std::optional<Checkpoint> resume) {
    tcfg.validate();
    mcfg.validate();
    if (dataset.empty()) throw DataError("training set is empty");

    std::vector<tokenizer::PaddedSequence> padded;
    padded.reserve(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        try {
            padded.push_back(tokenizer::pad(dataset[i], mcfg.max_len));
        } catch (const DataError& e) {
            throw DataError("training example " + std::to_string(i) + ": " + e.what());
        }
    }

    const numerics::AdamConfig adam_cfg{tcfg.learning_rate};
    Checkpoint ck;
    ck.config = mcfg;
    if (resume) {
        if (!(resume->config == mcfg)) throw ConfigError("resume checkpoint was trained with a different model config");
        ck.params = std::move(resume->params);
        TrainingState st;
        if (resume->training) {
            st.epochs_done = resume->training->epochs_done;
            st.epoch_losses = std::move(resume->training->epoch_losses);
            const auto& a = resume->training->adam;
            st.adam = numerics::AdamState(adam_cfg, a.first_moments(), a.second_moments(), a.step());
        } else {
            st.adam = numerics::AdamState(adam_cfg, ck.params.tensors);
        }
        ck.training = std::move(st);
    } else {
        ck.params = init_params(mcfg, derive_seed(tcfg.seed, {0x1417}));
        ck.training = TrainingState{0, {}, numerics::AdamState(adam_cfg, ck.params.tensors)};
    }
    TrainingState& st = *ck.training;

    const std::size_t n = padded.size();
    std::vector<std::size_t> order(n);
    std::vector<ExampleGradient> slots;
    for (std::size_t epoch = st.epochs_done; epoch < tcfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(derive_seed(tcfg.seed, {1, epoch}));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double epoch_loss = 0.0;
        for (std::size_t begin = 0; begin < n; begin += tcfg.batch_size) {
            const std::size_t b = std::min(tcfg.batch_size, n - begin);
            slots.assign(b, ExampleGradient{});
            parallel_for(b, tcfg.threads, [&](std::size_t j) {
                const std::size_t idx = order[begin + j];
                Rng drop_rng(derive_seed(tcfg.seed, {2, epoch, idx}));
                slots[j] = example_gradient(padded[idx], ck.params, mcfg, true, &drop_rng);
            });
            // Fixed-order reduction keeps results independent of the thread count.
            std::array<Tensor, kParamCount> grads = slots[0].grads;
            double batch_loss = slots[0].loss;
            for (std::size_t j = 1; j < b; ++j) {
                batch_loss += slots[j].loss;
                for (std::size_t p = 0; p < kParamCount; ++p) {
                    auto dst = grads[p].mutable_values();
                    const auto src = slots[j].grads[p].values();
                    for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += src[e];
                }
            }
            const double inv = 1.0 / static_cast<double>(b);
            for (auto& gt : grads) {
                for (double& v : gt.mutable_values()) v *= inv;
            }
            numerics::adam_step(ck.params.tensors, grads, st.adam);
            epoch_loss += batch_loss;
        }
        st.epoch_losses.push_back(epoch_loss / static_cast<double>(n));
        st.epochs_done = epoch + 1;
    }
    return ck;
}

std::vector<double> attention_weights(const tokenizer::TokenSequence& seq, const ModelParams& params,
                                      const ModelConfig& cfg) {
    Tape tape;
    const Graph g = build_graph(tape, params, cfg, tokenizer::pad(seq, cfg.max_len), false, nullptr, false);
    if (!g.context_attention) return {};
    const auto row = g.context_attention->value().values();
    return {row.begin(), row.begin() + static_cast<std::ptrdiff_t>(seq.valid_len())};
}

TokenEmbeddings token_embeddings(const tokenizer::TokenSequence& seq, const ModelParams& params,
                                 const ModelConfig& cfg) {
    Tape tape;
    const Graph g = build_graph(tape, params, cfg, tokenizer::pad(seq, cfg.max_len), false, nullptr, false);
    TokenEmbeddings out;
    out.rows = g.global_out.value();
    out.roles.assign(cfg.classes(), TokenRole::kPad);
    out.roles[0] = TokenRole::kContext;
    for (std::size_t i = 1; i <= seq.valid_len(); ++i) {
        out.roles[i] = seq.label >= 1 && i >= seq.label ? TokenRole::kPostDrift : TokenRole::kPreDrift;
    }
    return out;
}

}  // namespace driftlab::model

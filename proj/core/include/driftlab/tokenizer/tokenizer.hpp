// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "driftlab/benchgen/benchgen.hpp"
#include "driftlab/error.hpp"
#include "driftlab/numerics/tape.hpp"
#include "driftlab/numerics/tensor.hpp"
#include "driftlab/random.hpp"
#include "driftlab/surrogate/rbfn.hpp"

namespace driftlab::tokenizer {

inline constexpr std::size_t kFeatureCount = 7;

/// Summary statistics of the prediction errors in one window.
struct FeatureToken {
    double mean = 0.0;
    double stddev = 0.0;
    double min = 0.0;
    double max = 0.0;
    double q1 = 0.0;
    double q2 = 0.0;
    double q3 = 0.0;

    std::array<double, kFeatureCount> to_array() const noexcept { return {mean, stddev, min, max, q1, q2, q3}; }
    static FeatureToken from_array(std::span<const double> v);

    friend bool operator==(const FeatureToken&, const FeatureToken&) = default;
};

/// Not enough errors to summarize yet; callers defer detection.
class ColdStartError : public DataError {
public:
    using DataError::DataError;
};

struct WindowConfig {
    std::size_t window = 30;
    std::size_t stride = 30;
    std::size_t max_len = 20;

    void validate() const;
};

/// Context token plus up to max_len window tokens, labeled with the 1-based
/// index of the first drifted window (0 = no drift).
struct TokenSequence {
    FeatureToken context;
    std::vector<FeatureToken> tokens;
    std::size_t label = 0;
    /// Stream index of the first sample of each token's window; may be empty.
    std::vector<std::size_t> window_starts;

    std::size_t valid_len() const noexcept { return tokens.size(); }
    friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

struct PaddedSequence {
    numerics::Tensor features;  // (max_len + 1) × 7, row 0 = context
    numerics::Mask mask;        // max_len + 1 entries
    std::size_t valid_len = 0;
    std::size_t label = 0;
};

/// Errors produced by one surrogate, starting right after its fit.
struct ErrorSegment {
    std::vector<double> errors;
    std::vector<int> env_ids;
    std::size_t origin = 0;  // stream index of errors[0]
};

/// Windows of a sequence whose newest token is `last_window` (0-based window
/// indices within a segment; window 0 only ever feeds the context).
struct SequenceSpan {
    std::size_t first_window = 1;
    std::size_t last_window = 1;
    std::size_t context_end = 0;  // errors [0, context_end) form the context
};

FeatureToken window_features(std::span<const double> errors);
FeatureToken context_token(std::span<const double> env_errors);

SequenceSpan sequence_span(std::size_t last_window, const WindowConfig& cfg);

/// Number of complete windows over `error_count` errors.
std::size_t complete_windows(std::size_t error_count, const WindowConfig& cfg) noexcept;

/// 1-based index of the first window in [first, last] holding a sample whose
/// env differs from env_ids[0]; 0 when none does.
std::size_t derive_label(std::span<const int> env_ids, const SequenceSpan& span, const WindowConfig& cfg);

TokenSequence make_sequence(std::span<const double> errors, const SequenceSpan& span, const WindowConfig& cfg,
                            std::size_t origin = 0);

std::vector<TokenSequence> build_training_set(std::span<const ErrorSegment> segments, const WindowConfig& cfg,
                                              Rng& rng);

TokenSequence truncate_augment(TokenSequence seq, Rng& rng);

PaddedSequence pad(const TokenSequence& seq, std::size_t max_len);

/// Per-environment surrogate lineages over a labeled stream: the surrogate of
/// environment k is fitted on its first samples and scored on the rest of k
/// and all of k+1.
std::vector<ErrorSegment> error_segments(std::span<const benchgen::StreamRecord> stream,
                                         const surrogate::SurrogatePolicy& policy);

void save_token_dataset(const std::filesystem::path& path, std::span<const TokenSequence> data);
std::vector<TokenSequence> load_token_dataset(const std::filesystem::path& path);

}  // namespace driftlab::tokenizer

// SPDX-License-Identifier: Apache-2.0
#include "driftlab/tokenizer/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

namespace driftlab::tokenizer {

using nlohmann::json;

namespace {

double sorted_quantile(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

FeatureToken summarize(std::span<const double> errors) {
    std::vector<double> sorted(errors.begin(), errors.end());
    std::sort(sorted.begin(), sorted.end());
    const auto n = static_cast<double>(sorted.size());

    double mean = 0.0;
    for (double e : errors) mean += e;
    mean /= n;
    double ss = 0.0;
    for (double e : errors) ss += (e - mean) * (e - mean);

    FeatureToken t;
    // Rounding can nudge the mean a hair outside [min, max] for near-constant data.
    t.mean = std::clamp(mean, sorted.front(), sorted.back());
    t.stddev = std::sqrt(ss / n);
    t.min = sorted.front();
    t.max = sorted.back();
    t.q1 = sorted_quantile(sorted, 0.25);
    t.q2 = sorted_quantile(sorted, 0.50);
    t.q3 = sorted_quantile(sorted, 0.75);
    return t;
}

std::array<double, kFeatureCount> read_token(const json& j) {
    if (!j.is_array() || j.size() != kFeatureCount) throw DataError("token must have 7 statistics");
    std::array<double, kFeatureCount> v{};
    for (std::size_t i = 0; i < kFeatureCount; ++i) v[i] = j.at(i).get<double>();
    return v;
}

}  // namespace

FeatureToken FeatureToken::from_array(std::span<const double> v) {
    if (v.size() != kFeatureCount) throw DimensionError("feature token needs 7 values");
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
}

void WindowConfig::validate() const {
    if (window < 2) throw ConfigError("window length must be at least 2");
    if (stride < 1 || stride > window) throw ConfigError("stride must lie in [1, window]");
    if (max_len < 2) throw ConfigError("max sequence length must be at least 2");
}

FeatureToken window_features(std::span<const double> errors) {
    if (errors.size() < 2) throw DataError("window too small: need at least 2 errors");
    return summarize(errors);
}

FeatureToken context_token(std::span<const double> env_errors) {
    if (env_errors.size() < 2) throw ColdStartError("context needs at least 2 errors from the current environment");
    return summarize(env_errors);
}

SequenceSpan sequence_span(std::size_t last_window, const WindowConfig& cfg) {
    if (last_window < 1) throw DataError("window 0 is reserved for the context");
    SequenceSpan s;
    s.last_window = last_window;
    s.first_window = last_window + 1 > cfg.max_len ? std::max<std::size_t>(1, last_window + 1 - cfg.max_len) : 1;
    s.context_end = s.first_window * cfg.stride;
    return s;
}

std::size_t complete_windows(std::size_t error_count, const WindowConfig& cfg) noexcept {
    if (error_count < cfg.window) return 0;
    return (error_count - cfg.window) / cfg.stride + 1;
}

std::size_t derive_label(std::span<const int> env_ids, const SequenceSpan& span, const WindowConfig& cfg) {
    if (env_ids.empty()) return 0;
    const int home = env_ids.front();
    for (std::size_t w = span.first_window; w <= span.last_window; ++w) {
        const std::size_t begin = w * cfg.stride;
        const std::size_t end = std::min(begin + cfg.window, env_ids.size());
        for (std::size_t i = begin; i < end; ++i) {
            if (env_ids[i] != home) return w - span.first_window + 1;
        }
    }
    return 0;
}

TokenSequence make_sequence(std::span<const double> errors, const SequenceSpan& span, const WindowConfig& cfg,
                            std::size_t origin) {
    const std::size_t end = span.last_window * cfg.stride + cfg.window;
    if (end > errors.size()) throw DataError("sequence extends past the available errors");
    TokenSequence seq;
    seq.context = context_token(errors.first(span.context_end));
    for (std::size_t w = span.first_window; w <= span.last_window; ++w) {
        seq.tokens.push_back(window_features(errors.subspan(w * cfg.stride, cfg.window)));
        seq.window_starts.push_back(origin + w * cfg.stride);
    }
    return seq;
}

std::vector<TokenSequence> build_training_set(std::span<const ErrorSegment> segments, const WindowConfig& cfg,
                                              Rng& rng) {
    cfg.validate();
    std::vector<TokenSequence> out;
    for (const ErrorSegment& seg : segments) {
        if (seg.env_ids.size() != seg.errors.size()) throw DimensionError("segment errors and env ids differ in length");
        if (seg.errors.empty()) continue;
        const int home = seg.env_ids.front();
        const std::size_t first_foreign = static_cast<std::size_t>(
            std::find_if(seg.env_ids.begin(), seg.env_ids.end(), [home](int e) { return e != home; }) -
            seg.env_ids.begin());

        const std::size_t windows = complete_windows(seg.errors.size(), cfg);
        for (std::size_t last = 1; last < windows; ++last) {
            const SequenceSpan span = sequence_span(last, cfg);
            if (span.context_end < 2) continue;
            // Once the drift reaches the context every later anchor is contaminated too.
            if (first_foreign < span.context_end) break;

            const std::size_t end = last * cfg.stride + cfg.window;
            std::size_t transitions = 0;
            for (std::size_t i = 1; i < end; ++i) transitions += seg.env_ids[i] != seg.env_ids[i - 1];
            if (transitions > 1) continue;

            TokenSequence seq = make_sequence(seg.errors, span, cfg, seg.origin);
            seq.label = derive_label(seg.env_ids, span, cfg);
            if (seq.label >= 1) seq = truncate_augment(std::move(seq), rng);
            out.push_back(std::move(seq));
        }
    }
    return out;
}

TokenSequence truncate_augment(TokenSequence seq, Rng& rng) {
    const std::size_t len = seq.tokens.size();
    if (seq.label == 0 || seq.label >= len) return seq;
    const std::size_t keep = std::uniform_int_distribution<std::size_t>(seq.label, len)(rng);
    seq.tokens.resize(keep);
    if (seq.window_starts.size() > keep) seq.window_starts.resize(keep);
    return seq;
}

PaddedSequence pad(const TokenSequence& seq, std::size_t max_len) {
    const std::size_t len = seq.tokens.size();
    if (len > max_len) {
        throw DataError("sequence has " + std::to_string(len) + " tokens, more than the maximum " +
                        std::to_string(max_len));
    }
    if (seq.label > len) throw DataError("drift label exceeds the valid length");
    PaddedSequence p;
    // PAD rows keep the zero sentinel; the model swaps in its learned embedding.
    p.features = numerics::Tensor({max_len + 1, kFeatureCount});
    p.mask.assign(max_len + 1, 0);
    const auto write_row = [&](std::size_t row, const FeatureToken& t) {
        const auto v = t.to_array();
        std::copy(v.begin(), v.end(), p.features.mutable_values().begin() + static_cast<std::ptrdiff_t>(row * kFeatureCount));
        p.mask[row] = 1;
    };
    write_row(0, seq.context);
    for (std::size_t i = 0; i < len; ++i) write_row(i + 1, seq.tokens[i]);
    if (!p.features.all_finite()) throw NumericError("non-finite token statistics");
    p.valid_len = len;
    p.label = seq.label;
    return p;
}

std::vector<ErrorSegment> error_segments(std::span<const benchgen::StreamRecord> stream,
                                         const surrogate::SurrogatePolicy& policy) {
    // Contiguous environment runs as [begin, end) index pairs.
    std::vector<std::pair<std::size_t, std::size_t>> runs;
    for (std::size_t i = 0; i < stream.size(); ++i) {
        if (i == 0 || stream[i].new_env || stream[i].env_id != stream[i - 1].env_id) runs.emplace_back(i, i);
        runs.back().second = i + 1;
    }

    std::vector<ErrorSegment> out;
    for (std::size_t k = 0; k < runs.size(); ++k) {
        surrogate::SurrogatePolicy p = policy;
        p.seed = derive_seed(policy.seed, {k});
        surrogate::SurrogateTracker tracker(p);
        const std::size_t end = k + 1 < runs.size() ? runs[k + 1].second : runs[k].second;
        ErrorSegment seg;
        for (std::size_t i = runs[k].first; i < end; ++i) {
            const auto e = tracker.observe(stream[i].x, stream[i].y);
            if (!e) continue;
            if (seg.errors.empty()) seg.origin = i;
            seg.errors.push_back(*e);
            seg.env_ids.push_back(stream[i].env_id);
        }
        if (!seg.errors.empty()) out.push_back(std::move(seg));
    }
    return out;
}

void save_token_dataset(const std::filesystem::path& path, std::span<const TokenSequence> data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open token dataset for writing: " + path.string());
    for (const TokenSequence& s : data) {
        json tokens = json::array();
        for (const FeatureToken& t : s.tokens) tokens.push_back(t.to_array());
        json line{{"context", s.context.to_array()},
                  {"tokens", std::move(tokens)},
                  {"dl", s.label},
                  {"len", s.tokens.size()}};
        if (!s.window_starts.empty()) line["starts"] = s.window_starts;
        out << line.dump() << '\n';
    }
    if (!out) throw DataError("failed writing token dataset: " + path.string());
}

std::vector<TokenSequence> load_token_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open token dataset: " + path.string());
    std::vector<TokenSequence> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            TokenSequence s;
            s.context = FeatureToken::from_array(read_token(j.at("context")));
            for (const json& t : j.at("tokens")) s.tokens.push_back(FeatureToken::from_array(read_token(t)));
            s.label = j.at("dl").get<std::size_t>();
            if (j.at("len").get<std::size_t>() != s.tokens.size()) throw DataError("len does not match token count");
            if (s.label > s.tokens.size()) throw DataError("dl exceeds the valid length");
            if (j.contains("starts")) s.window_starts = j.at("starts").get<std::vector<std::size_t>>();
            out.push_back(std::move(s));
        } catch (const json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace driftlab::tokenizer

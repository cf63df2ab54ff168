// SPDX-License-Identifier: Apache-2.0
#include "driftlab/detectors/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "driftlab/error.hpp"

namespace driftlab::detectors {

std::string_view to_string(DriftStatus s) noexcept {
    switch (s) {
        case DriftStatus::kStable: return "stable";
        case DriftStatus::kWarning: return "warning";
        case DriftStatus::kDrift: return "drift";
    }
    return "unknown";
}

namespace {

DriftSignal drift_at(std::size_t hint) {
    DriftSignal s;
    s.status = DriftStatus::kDrift;
    s.position_hint = hint;
    return s;
}

DriftSignal warming() {
    DriftSignal s;
    s.warm_up = true;
    return s;
}

}  // namespace

// ---- DDM ----

Ddm::Ddm(DdmConfig cfg) : cfg_(cfg), threshold_(cfg.threshold) {}

void Ddm::clear_statistics() noexcept {
    n_ = 0;
    ones_ = 0;
    p_min_ = 0.0;
    s_min_ = 0.0;
    have_min_ = false;
}

void Ddm::reset() {
    clear_statistics();
    seen_ = 0;
    threshold_ = cfg_.threshold;
}

void Ddm::calibrate(std::span<const double> errors) {
    if (errors.empty()) return;
    double mean = 0.0;
    for (double e : errors) mean += e;
    mean /= static_cast<double>(errors.size());
    double ss = 0.0;
    for (double e : errors) ss += (e - mean) * (e - mean);
    threshold_ = mean + 2.0 * std::sqrt(ss / static_cast<double>(errors.size()));
}

DriftSignal Ddm::update(double e) {
    const std::size_t index = seen_++;
    ++n_;
    ones_ += e > threshold_ ? 1 : 0;
    const double n = static_cast<double>(n_);
    const double p = (static_cast<double>(ones_) + 1.0) / (n + 2.0);
    const double s = std::sqrt(p * (1.0 - p) / n);
    if (n_ < cfg_.min_samples) return {};
    if (!have_min_ || p + s < p_min_ + s_min_) {
        p_min_ = p;
        s_min_ = s;
        have_min_ = true;
    }
    if (p + s >= p_min_ + cfg_.drift_level * s_min_) {
        clear_statistics();
        return drift_at(index);
    }
    DriftSignal sig;
    if (p + s >= p_min_ + cfg_.warning_level * s_min_) sig.status = DriftStatus::kWarning;
    return sig;
}

// ---- HDDM_A ----

void MinMaxScaler::fit(std::span<const double> v) {
    if (v.empty()) return;
    const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
    lo = *lo_it;
    hi = *hi_it;
}

double MinMaxScaler::transform(double v) const noexcept {
    if (!(hi > lo)) return 0.0;
    return std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
}

HddmA::HddmA(HddmConfig cfg) : cfg_(cfg) {}

void HddmA::clear_statistics() noexcept {
    n_total_ = c_total_ = n_min_ = c_min_ = 0.0;
}

void HddmA::reset() {
    clear_statistics();
    seen_ = 0;
    scaler_ = {};
    scaled_ = false;
}

void HddmA::calibrate(std::span<const double> errors) {
    scaler_.fit(errors);
    scaled_ = true;
}

bool HddmA::mean_increased(double c_min, double n_min, double c_total, double n_total, double confidence) {
    if (n_min == n_total) return false;
    const double m = (n_total - n_min) / (n_min * n_total);
    const double bound = std::sqrt(m / 2.0 * std::log(2.0 / confidence));
    return c_total / n_total - c_min / n_min >= bound;
}

DriftSignal HddmA::update(double e) { return update_normalized(scaled_ ? scaler_.transform(e) : e); }

DriftSignal HddmA::update_normalized(double v) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::logic_error("hddm_a input outside [0, 1]; the scaler must clip");
    ++seen_;
    n_total_ += 1.0;
    c_total_ += v;
    if (n_min_ == 0.0) {
        n_min_ = n_total_;
        c_min_ = c_total_;
    }
    const double log_term = std::log(1.0 / cfg_.drift_confidence);
    const double bound_min = std::sqrt(log_term / (2.0 * n_min_));
    const double bound_total = std::sqrt(log_term / (2.0 * n_total_));
    if (c_min_ / n_min_ + bound_min >= c_total_ / n_total_ + bound_total) {
        n_min_ = n_total_;
        c_min_ = c_total_;
    }
    if (mean_increased(c_min_, n_min_, c_total_, n_total_, cfg_.drift_confidence)) {
        const auto since_cut = static_cast<std::size_t>(n_total_ - n_min_);
        clear_statistics();
        return drift_at(seen_ - since_cut);
    }
    DriftSignal sig;
    if (mean_increased(c_min_, n_min_, c_total_, n_total_, cfg_.warning_confidence)) {
        sig.status = DriftStatus::kWarning;
    }
    return sig;
}

// ---- ADWIN ----

Adwin::Adwin(AdwinConfig cfg) : cfg_(cfg) {
    if (!(cfg_.delta > 0.0 && cfg_.delta < 1.0)) throw ConfigError("adwin delta must lie in (0, 1)");
    if (cfg_.max_buckets < 2) throw ConfigError("adwin needs at least 2 buckets per row");
}

void Adwin::reset() {
    rows_.clear();
    seen_ = 0;
    width_ = 0;
    total_ = 0.0;
    variance_ = 0.0;
}

std::size_t Adwin::bucket_count() const noexcept {
    std::size_t n = 0;
    for (const auto& r : rows_) n += r.size();
    return n;
}

void Adwin::insert(double e) {
    if (rows_.empty()) rows_.emplace_back();
    rows_[0].push_front({e, 0.0});
    if (width_ > 0) {
        const double mean = total_ / static_cast<double>(width_);
        const double n = static_cast<double>(width_);
        variance_ += n / (n + 1.0) * (e - mean) * (e - mean);
    }
    ++width_;
    total_ += e;
}

void Adwin::compress() {
    for (std::size_t i = 0; i < rows_.size(); ++i) {
        if (rows_[i].size() <= cfg_.max_buckets) break;
        const double n = std::ldexp(1.0, static_cast<int>(i));
        const Bucket b1 = rows_[i].back();
        rows_[i].pop_back();
        const Bucket b2 = rows_[i].back();
        rows_[i].pop_back();
        const double d = b1.total / n - b2.total / n;
        const Bucket merged{b1.total + b2.total, b1.variance + b2.variance + n / 2.0 * d * d};
        if (i + 1 == rows_.size()) rows_.emplace_back();
        rows_[i + 1].push_front(merged);
    }
}

void Adwin::drop_oldest() {
    std::size_t row = rows_.size();
    while (row > 0 && rows_[row - 1].empty()) --row;
    if (row == 0) return;
    --row;
    const Bucket b = rows_[row].back();
    rows_[row].pop_back();
    const double nb = std::ldexp(1.0, static_cast<int>(row));
    const double n = static_cast<double>(width_);
    const double rest = n - nb;
    width_ -= static_cast<std::size_t>(nb);
    if (rest <= 0.0) {
        total_ = variance_ = 0.0;
    } else {
        const double mean_rest = (total_ - b.total) / rest;
        const double d = b.total / nb - mean_rest;
        variance_ = std::max(0.0, variance_ - b.variance - nb * rest / n * d * d);
        total_ -= b.total;
    }
    while (!rows_.empty() && rows_.back().empty()) rows_.pop_back();
}

bool Adwin::detect_and_cut() {
    const auto min_w = static_cast<double>(cfg_.min_window);
    if (width_ < 2 * cfg_.min_window) return false;
    const double n = static_cast<double>(width_);
    const double var = variance_ / n;
    const double dd = std::log(2.0 * std::log(n) / cfg_.delta);
    double n0 = 0.0, s0 = 0.0;
    // Walk splits from the oldest bucket forward.
    for (std::size_t row = rows_.size(); row-- > 0;) {
        const double nb = std::ldexp(1.0, static_cast<int>(row));
        for (auto it = rows_[row].rbegin(); it != rows_[row].rend(); ++it) {
            n0 += nb;
            s0 += it->total;
            const double n1 = n - n0;
            if (n1 < min_w) return false;
            if (n0 < min_w) continue;
            const double m_recip = 1.0 / (n0 - min_w + 1.0) + 1.0 / (n1 - min_w + 1.0);
            const double eps = std::sqrt(2.0 * m_recip * var * dd) + 2.0 / 3.0 * dd * m_recip;
            if (std::fabs(s0 / n0 - (total_ - s0) / n1) > eps) return true;
        }
    }
    return false;
}

DriftSignal Adwin::update(double e) {
    ++seen_;
    insert(e);
    compress();
    bool cut = false;
    while (detect_and_cut()) {
        drop_oldest();
        cut = true;
    }
    if (cut) return drift_at(seen_ - width_);
    return {};
}

// ---- KSWIN ----

double ks_distance(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw DataError("ks_distance needs two nonempty samples");
    std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    const double n = static_cast<double>(x.size()), m = static_cast<double>(y.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < x.size() && j < y.size()) {
        const double v = std::min(x[i], y[j]);
        while (i < x.size() && x[i] == v) ++i;
        while (j < y.size() && y[j] == v) ++j;
        d = std::max(d, std::fabs(static_cast<double>(i) / n - static_cast<double>(j) / m));
    }
    return d;
}

double ks_p_value(double distance, std::size_t n, std::size_t m) {
    const double ne = static_cast<double>(n) * static_cast<double>(m) / static_cast<double>(n + m);
    const double sq = std::sqrt(ne);
    const double lambda = (sq + 0.12 + 0.11 / sq) * distance;
    if (lambda <= 0.0) return 1.0;
    double q = 0.0;
    if (lambda < 1.18) {
        // Jacobi-theta form converges fast for small lambda.
        const double pi2 = std::numbers::pi * std::numbers::pi;
        double s = 0.0;
        for (int j = 1; j <= 50; ++j) {
            const double k = 2.0 * j - 1.0;
            s += std::exp(-k * k * pi2 / (8.0 * lambda * lambda));
        }
        q = 1.0 - std::sqrt(2.0 * std::numbers::pi) / lambda * s;
    } else {
        for (int j = 1; j <= 100; ++j) {
            const double term = std::exp(-2.0 * j * j * lambda * lambda);
            q += (j % 2 ? 2.0 : -2.0) * term;
            if (term < 1e-18) break;
        }
    }
    return std::clamp(q, 0.0, 1.0);
}

Kswin::Kswin(KswinConfig cfg) : cfg_(cfg), rng_(cfg.seed) {
    if (cfg_.recent == 0 || 2 * cfg_.recent > cfg_.window) {
        throw ConfigError("kswin needs 0 < recent <= window / 2");
    }
    if (!(cfg_.alpha > 0.0 && cfg_.alpha < 1.0)) throw ConfigError("kswin alpha must lie in (0, 1)");
}

void Kswin::reset() {
    window_.clear();
    rng_.seed(cfg_.seed);
    seen_ = 0;
    last_distance_ = 0.0;
    last_p_ = 1.0;
}

DriftSignal Kswin::update(double e) {
    ++seen_;
    window_.push_back(e);
    if (window_.size() > cfg_.window) window_.pop_front();
    if (window_.size() < cfg_.window) return warming();

    const std::size_t r = cfg_.recent;
    const std::size_t old = cfg_.window - r;
    std::vector<std::size_t> idx(old);
    for (std::size_t i = 0; i < old; ++i) idx[i] = i;
    std::vector<double> older(r), recent(window_.end() - static_cast<std::ptrdiff_t>(r), window_.end());
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t j = i + std::uniform_int_distribution<std::size_t>(0, old - 1 - i)(rng_);
        std::swap(idx[i], idx[j]);
        older[i] = window_[idx[i]];
    }
    last_distance_ = ks_distance(older, recent);
    last_p_ = ks_p_value(last_distance_, r, r);
    if (last_p_ < cfg_.alpha) {
        window_.erase(window_.begin(), window_.end() - static_cast<std::ptrdiff_t>(r));
        return drift_at(seen_ - r);
    }
    return {};
}

// ---- stream detectors ----

DriftSignal StreamDetector::observe_batch(std::span<const benchgen::StreamRecord> batch) {
    DriftSignal last;
    std::optional<DriftSignal> first_drift;
    for (const auto& rec : batch) {
        last = observe(rec);
        if (last.drift() && !first_drift) first_drift = last;
    }
    return first_drift ? *first_drift : last;
}

ErrorPipelineDetector::ErrorPipelineDetector(std::unique_ptr<ScalarDetector> detector, PipelineConfig cfg)
    : detector_(std::move(detector)), cfg_(cfg), tracker_(cfg.surrogate) {
    if (!detector_) throw ConfigError("pipeline needs a detector");
}

void ErrorPipelineDetector::reset() {
    detector_->reset();
    tracker_ = surrogate::SurrogateTracker(cfg_.surrogate);
    calibration_errors_.clear();
    times_.clear();
    restarts_ = 0;
}

DriftSignal ErrorPipelineDetector::observe(const benchgen::StreamRecord& rec) {
    const auto e = tracker_.observe(rec.x, rec.y);
    if (!e) return warming();
    times_.push_back(rec.t);

    std::vector<double> pending;
    if (calibration_errors_.size() < cfg_.calibration) {
        calibration_errors_.push_back(*e);
        if (calibration_errors_.size() < cfg_.calibration) return warming();
        detector_->calibrate(calibration_errors_);
        pending = calibration_errors_;
    } else {
        pending.push_back(*e);
    }

    DriftSignal out;
    for (double v : pending) {
        const DriftSignal s = detector_->update(v);
        if (s.status == DriftStatus::kWarning) out.status = DriftStatus::kWarning;
        if (!s.drift()) continue;
        const std::size_t hint = s.position_hint.value_or(times_.size() - 1);
        out.status = DriftStatus::kDrift;
        out.position_hint = times_[std::min(hint, times_.size() - 1)];
        out.detected_at = rec.t;
        // Restart the whole lineage: new surrogate, fresh detector state.
        detector_->reset();
        tracker_.reset();
        calibration_errors_.clear();
        times_.clear();
        ++restarts_;
        break;
    }
    return out;
}

SequenceClassifier model_classifier(std::shared_ptr<const model::Checkpoint> checkpoint) {
    if (!checkpoint) throw ConfigError("trace detector needs a checkpoint");
    return [checkpoint](const tokenizer::TokenSequence& seq) {
        return model::forward(seq, checkpoint->params, checkpoint->config).label;
    };
}

TraceDetector::TraceDetector(SequenceClassifier classifier, TraceConfig cfg)
    : classifier_(std::move(classifier)), cfg_(cfg), tracker_(cfg.surrogate) {
    cfg_.windows.validate();
    if (!classifier_) throw ConfigError("trace detector needs a classifier");
}

void TraceDetector::reset() {
    tracker_ = surrogate::SurrogateTracker(cfg_.surrogate);
    errors_.clear();
    times_.clear();
    tokens_.clear();
    last_sequence_.reset();
    evaluations_ = 0;
    restarts_ = 0;
}

DriftSignal TraceDetector::observe(const benchgen::StreamRecord& rec) {
    const auto e = tracker_.observe(rec.x, rec.y);
    if (!e) return warming();
    errors_.push_back(*e);
    times_.push_back(rec.t);

    const auto& w = cfg_.windows;
    const std::size_t complete = tokenizer::complete_windows(errors_.size(), w);
    if (complete <= tokens_.size()) {
        DriftSignal s;
        s.warm_up = tokens_.size() < 2;
        return s;
    }
    const std::size_t last = complete - 1;
    tokens_.push_back(tokenizer::window_features(std::span<const double>(errors_).subspan(last * w.stride, w.window)));
    if (last < 1) return warming();

    const tokenizer::SequenceSpan span = tokenizer::sequence_span(last, w);
    tokenizer::TokenSequence seq;
    try {
        seq.context = tokenizer::context_token(std::span<const double>(errors_).first(span.context_end));
    } catch (const tokenizer::ColdStartError&) {
        return warming();
    }
    for (std::size_t j = span.first_window; j <= span.last_window; ++j) {
        seq.tokens.push_back(tokens_[j]);
        seq.window_starts.push_back(times_[j * w.stride]);
    }
    ++evaluations_;
    const std::size_t label = classifier_(seq);
    last_sequence_ = seq;
    if (label == 0 || label > seq.tokens.size()) return {};

    DriftSignal s = drift_at(seq.window_starts[label - 1]);
    s.detected_at = rec.t;
    tracker_.reset();
    errors_.clear();
    times_.clear();
    tokens_.clear();
    ++restarts_;
    return s;
}

DriftSignal OracleDetector::observe(const benchgen::StreamRecord& rec) {
    if (!rec.new_env) return {};
    DriftSignal s = drift_at(rec.t);
    s.detected_at = rec.t;
    return s;
}

std::unique_ptr<StreamDetector> make_detector(const DetectorSpec& spec) {
    const auto pipeline = [&](std::unique_ptr<ScalarDetector> d) {
        return std::make_unique<ErrorPipelineDetector>(std::move(d), spec.pipeline);
    };
    if (spec.kind == "ddm") return pipeline(std::make_unique<Ddm>());
    if (spec.kind == "hddm_a") return pipeline(std::make_unique<HddmA>());
    if (spec.kind == "adwin") return pipeline(std::make_unique<Adwin>());
    if (spec.kind == "kswin") {
        KswinConfig k;
        k.seed = spec.seed;
        return pipeline(std::make_unique<Kswin>(k));
    }
    if (spec.kind == "trace") {
        if (!spec.checkpoint) throw ConfigError("detector 'trace' requires a checkpoint");
        TraceConfig tc = spec.trace;
        tc.windows.max_len = spec.checkpoint->config.max_len;
        return std::make_unique<TraceDetector>(model_classifier(spec.checkpoint), tc);
    }
    if (spec.kind == "oracle") return std::make_unique<OracleDetector>();
    if (spec.kind == "none" || spec.kind == "no-adapt") return std::make_unique<NullDetector>();
    throw ConfigError("unknown detector: " + spec.kind);
}

std::vector<DetectionEvent> run_detector(StreamDetector& det, std::span<const benchgen::StreamRecord> stream) {
    std::vector<DetectionEvent> events;
    DriftStatus prev = DriftStatus::kStable;
    const std::string name = det.name();
    for (const auto& rec : stream) {
        const DriftSignal s = det.observe(rec);
        if (s.drift()) {
            events.push_back({s.detected_at.value_or(rec.t), name, DriftStatus::kDrift, s.position_hint});
        } else if (s.status == DriftStatus::kWarning && prev != DriftStatus::kWarning) {
            events.push_back({rec.t, name, DriftStatus::kWarning, std::nullopt});
        }
        prev = s.status;
    }
    return events;
}

std::vector<std::size_t> detection_times(std::span<const DetectionEvent> events) {
    std::vector<std::size_t> out;
    for (const auto& e : events) {
        if (e.status == DriftStatus::kDrift) out.push_back(e.t);
    }
    std::sort(out.begin(), out.end());
    return out;
}

void save_detection_log(const std::filesystem::path& path, std::span<const DetectionEvent> events) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open detection log for writing: " + path.string());
    for (const auto& e : events) {
        nlohmann::json j{{"t", e.t}, {"detector", e.detector}, {"status", std::string(to_string(e.status))}};
        j["position_hint"] = e.position_hint ? nlohmann::json(*e.position_hint) : nlohmann::json(nullptr);
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("failed writing detection log: " + path.string());
}

std::vector<DetectionEvent> load_detection_log(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open detection log: " + path.string());
    std::vector<DetectionEvent> out;
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
        ++no;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            DetectionEvent e;
            e.t = j.at("t").get<std::size_t>();
            e.detector = j.at("detector").get<std::string>();
            const auto st = j.at("status").get<std::string>();
            e.status = st == "drift" ? DriftStatus::kDrift : st == "warning" ? DriftStatus::kWarning : DriftStatus::kStable;
            if (!j.at("position_hint").is_null()) e.position_hint = j.at("position_hint").get<std::size_t>();
            out.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw DataError(path.string() + ":" + std::to_string(no) + ": " + ex.what());
        }
    }
    return out;
}

}  // namespace driftlab::detectors

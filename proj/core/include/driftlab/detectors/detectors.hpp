// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "driftlab/benchgen/benchgen.hpp"
#include "driftlab/model/model.hpp"
#include "driftlab/random.hpp"
#include "driftlab/surrogate/rbfn.hpp"
#include "driftlab/tokenizer/tokenizer.hpp"

namespace driftlab::detectors {

enum class DriftStatus { kStable, kWarning, kDrift };

std::string_view to_string(DriftStatus s) noexcept;

struct DriftSignal {
    DriftStatus status = DriftStatus::kStable;
    /// Estimated onset; only set on drift. Scalar detectors report it as an
    /// index into their own input sequence, stream detectors as a stream time.
    std::optional<std::size_t> position_hint;
    /// Stream time at which the detector fired (stream detectors only).
    std::optional<std::size_t> detected_at;
    bool warm_up = false;

    bool drift() const noexcept { return status == DriftStatus::kDrift; }
};

/// One-error-per-step statistical detector.
class ScalarDetector {
public:
    virtual ~ScalarDetector() = default;
    virtual DriftSignal update(double e) = 0;
    virtual void reset() = 0;
    /// Optional fit of input adaptation (thresholds, scaling) on in-control errors.
    virtual void calibrate(std::span<const double> /*errors*/) {}
    virtual std::size_t samples_seen() const noexcept = 0;
    virtual std::string_view name() const noexcept = 0;
};

struct DdmConfig {
    double threshold = 0.0;  // binarization threshold, usually set by calibrate()
    std::size_t min_samples = 30;
    double warning_level = 2.0;
    double drift_level = 3.0;
};

/// DDM on binarized errors b = [e > threshold]. The rate estimate is the
/// Laplace-smoothed (k+1)/(n+2), so an all-zero prefix does not pin s_min at 0.
class Ddm final : public ScalarDetector {
public:
    explicit Ddm(DdmConfig cfg = {});
    DriftSignal update(double e) override;
    void reset() override;
    /// threshold = mean + 2·stddev of the errors.
    void calibrate(std::span<const double> errors) override;
    std::size_t samples_seen() const noexcept override { return seen_; }
    std::string_view name() const noexcept override { return "ddm"; }

    double threshold() const noexcept { return threshold_; }

private:
    DdmConfig cfg_;
    double threshold_ = 0.0;
    std::size_t seen_ = 0;
    std::size_t n_ = 0;
    std::size_t ones_ = 0;
    double p_min_ = 0.0;
    double s_min_ = 0.0;
    bool have_min_ = false;

    void clear_statistics() noexcept;
};

/// Min-max scaler frozen after fitting; transform() clips to [0, 1].
struct MinMaxScaler {
    double lo = 0.0;
    double hi = 1.0;
    void fit(std::span<const double> v);
    double transform(double v) const noexcept;
};

struct HddmConfig {
    double drift_confidence = 0.001;
    double warning_confidence = 0.005;
};

/// HDDM with the A-test (moving averages, Hoeffding bound), one-sided for
/// increases. Inputs must lie in [0, 1]; use MinMaxScaler upstream.
class HddmA final : public ScalarDetector {
public:
    explicit HddmA(HddmConfig cfg = {});
    DriftSignal update(double e) override;
    void reset() override;
    void calibrate(std::span<const double> errors) override;
    std::size_t samples_seen() const noexcept override { return seen_; }
    std::string_view name() const noexcept override { return "hddm_a"; }

    /// Feeds an already normalized value; throws on values outside [0, 1].
    DriftSignal update_normalized(double v);

private:
    void clear_statistics() noexcept;
    static bool mean_increased(double c_min, double n_min, double c_total, double n_total, double confidence);

    HddmConfig cfg_;
    std::size_t seen_ = 0;
    double n_total_ = 0.0, c_total_ = 0.0;
    double n_min_ = 0.0, c_min_ = 0.0;
    MinMaxScaler scaler_;  // fitted by calibrate()
    bool scaled_ = false;
};

struct AdwinConfig {
    double delta = 0.002;
    std::size_t max_buckets = 5;  // per exponential-histogram row
    std::size_t min_window = 5;   // shortest sub-window considered for a cut
};

/// ADWIN over an exponential histogram of buckets holding (count, sum, variance).
class Adwin final : public ScalarDetector {
public:
    explicit Adwin(AdwinConfig cfg = {});
    DriftSignal update(double e) override;
    void reset() override;
    std::size_t samples_seen() const noexcept override { return seen_; }
    std::string_view name() const noexcept override { return "adwin"; }

    std::size_t width() const noexcept { return width_; }
    double mean() const noexcept { return width_ ? total_ / static_cast<double>(width_) : 0.0; }
    double variance() const noexcept { return width_ ? variance_ / static_cast<double>(width_) : 0.0; }
    std::size_t bucket_count() const noexcept;

private:
    struct Bucket {
        double total = 0.0;
        double variance = 0.0;  // sum of squared deviations inside the bucket
    };
    void insert(double e);
    void compress();
    bool detect_and_cut();
    void drop_oldest();

    AdwinConfig cfg_;
    // rows_[i] holds buckets of 2^i samples, newest first.
    std::vector<std::deque<Bucket>> rows_;
    std::size_t seen_ = 0;
    std::size_t width_ = 0;
    double total_ = 0.0;
    double variance_ = 0.0;
};

struct KswinConfig {
    std::size_t window = 100;
    std::size_t recent = 30;
    double alpha = 0.005;
    std::uint64_t seed = 0;
};

/// Two-sample KS distance sup|F_a - F_b| via a sorted merge (ties handled).
double ks_distance(std::span<const double> a, std::span<const double> b);

/// Asymptotic Kolmogorov p-value with the Stephens small-sample correction.
double ks_p_value(double distance, std::size_t n, std::size_t m);

class Kswin final : public ScalarDetector {
public:
    explicit Kswin(KswinConfig cfg = {});
    DriftSignal update(double e) override;
    void reset() override;
    std::size_t samples_seen() const noexcept override { return seen_; }
    std::string_view name() const noexcept override { return "kswin"; }

    double last_distance() const noexcept { return last_distance_; }
    double last_p_value() const noexcept { return last_p_; }

private:
    KswinConfig cfg_;
    std::deque<double> window_;
    Rng rng_;
    std::size_t seen_ = 0;
    double last_distance_ = 0.0;
    double last_p_ = 1.0;
};

/// Consumes raw stream records and reports drifts in stream time.
class StreamDetector {
public:
    virtual ~StreamDetector() = default;
    virtual DriftSignal observe(const benchgen::StreamRecord& rec) = 0;
    virtual void reset() = 0;
    virtual std::string name() const = 0;

    /// Feeds a batch; returns the first drift in it (or the last signal).
    /// Records after a drift go to the restarted detector.
    DriftSignal observe_batch(std::span<const benchgen::StreamRecord> batch);
};

struct PipelineConfig {
    surrogate::SurrogatePolicy surrogate;
    /// Errors used to calibrate the scalar detector after each surrogate fit.
    std::size_t calibration = 60;
};

/// Surrogate + scalar detector: errors of a freshly fitted RBFN are fed to
/// the detector; a drift resets both.
class ErrorPipelineDetector final : public StreamDetector {
public:
    ErrorPipelineDetector(std::unique_ptr<ScalarDetector> detector, PipelineConfig cfg = {});
    DriftSignal observe(const benchgen::StreamRecord& rec) override;
    void reset() override;
    std::string name() const override { return std::string(detector_->name()); }

private:
    std::unique_ptr<ScalarDetector> detector_;
    PipelineConfig cfg_;
    surrogate::SurrogateTracker tracker_;
    std::vector<double> calibration_errors_;
    std::vector<std::size_t> times_;  // stream time of each error fed since reset
    std::size_t restarts_ = 0;
};

struct TraceConfig {
    tokenizer::WindowConfig windows;
    surrogate::SurrogatePolicy surrogate;
};

/// Maps a token sequence to a predicted drift label.
using SequenceClassifier = std::function<std::size_t(const tokenizer::TokenSequence&)>;

SequenceClassifier model_classifier(std::shared_ptr<const model::Checkpoint> checkpoint);

/// The learned detector: tokenizes surrogate errors window by window and runs
/// the classifier once per completed window.
class TraceDetector final : public StreamDetector {
public:
    TraceDetector(SequenceClassifier classifier, TraceConfig cfg = {});
    DriftSignal observe(const benchgen::StreamRecord& rec) override;
    void reset() override;
    std::string name() const override { return "trace"; }

    /// The sequence evaluated at the most recent window completion.
    const std::optional<tokenizer::TokenSequence>& last_sequence() const noexcept { return last_sequence_; }
    std::size_t evaluations() const noexcept { return evaluations_; }

private:
    SequenceClassifier classifier_;
    TraceConfig cfg_;
    surrogate::SurrogateTracker tracker_;
    std::vector<double> errors_;
    std::vector<std::size_t> times_;
    std::vector<tokenizer::FeatureToken> tokens_;  // tokens_[w] = window w
    std::optional<tokenizer::TokenSequence> last_sequence_;
    std::size_t evaluations_ = 0;
    std::size_t restarts_ = 0;
};

/// Fires exactly at true environment boundaries (control arm).
class OracleDetector final : public StreamDetector {
public:
    DriftSignal observe(const benchgen::StreamRecord& rec) override;
    void reset() override {}
    std::string name() const override { return "oracle"; }
};

/// Never fires (no-adapt control arm).
class NullDetector final : public StreamDetector {
public:
    DriftSignal observe(const benchgen::StreamRecord&) override { return {}; }
    void reset() override {}
    std::string name() const override { return "none"; }
};

struct DetectorSpec {
    std::string kind;  // ddm | hddm_a | adwin | kswin | trace | oracle | none
    PipelineConfig pipeline;
    TraceConfig trace;
    std::shared_ptr<const model::Checkpoint> checkpoint;  // trace only
    std::uint64_t seed = 0;
};

std::unique_ptr<StreamDetector> make_detector(const DetectorSpec& spec);

struct DetectionEvent {
    std::size_t t = 0;
    std::string detector;
    DriftStatus status = DriftStatus::kDrift;
    std::optional<std::size_t> position_hint;
};

/// Runs a detector over a whole stream, returning drift and warning-onset events.
std::vector<DetectionEvent> run_detector(StreamDetector& det, std::span<const benchgen::StreamRecord> stream);

/// Detection times (drift events only), ascending.
std::vector<std::size_t> detection_times(std::span<const DetectionEvent> events);

void save_detection_log(const std::filesystem::path& path, std::span<const DetectionEvent> events);
std::vector<DetectionEvent> load_detection_log(const std::filesystem::path& path);

}  // namespace driftlab::detectors

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "driftlab/benchgen/benchgen.hpp"
#include "driftlab/model/model.hpp"
#include "driftlab/sddea/sddea.hpp"
#include "driftlab/tokenizer/tokenizer.hpp"

namespace driftlab::harness {

// ---- detection metrics ----

struct DetectionOutcome {
    std::size_t tp = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    std::optional<double> mean_delay;  // absent without matches
    std::vector<std::size_t> delays;
};

/// Greedy chronological matching: each detection takes the earliest unmatched
/// truth with truth <= detection <= truth + delta. Inputs must be ascending.
DetectionOutcome detection_metrics(std::span<const std::size_t> truths, std::span<const std::size_t> detections,
                                   std::size_t delta);

// ---- PCA ----

struct PcaResult {
    std::vector<std::array<double, 2>> coords;  // m rows
    std::array<std::vector<double>, 2> components;
    std::array<double, 2> explained_variance{};
    std::array<double, 2> explained_ratio{};
    bool degenerate = false;
};

struct PcaOptions {
    std::size_t iterations = 200;
    double tolerance = 1e-10;
};

/// Top-2 principal axes via power iteration with deflation. Each axis is
/// signed so that its largest-magnitude loading is positive.
PcaResult pca_2d(std::span<const std::vector<double>> rows, const PcaOptions& opt = {});

// ---- summary statistics ----

/// Linear-interpolated quantile at rank q(n-1) of an unsorted sample.
double quantile(std::vector<double> v, double q);

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept;
/// Hash of (t, env, x, y, new_env) for every record, in order.
std::uint64_t stream_hash(std::span<const benchgen::StreamRecord> records) noexcept;
std::string hex64(std::uint64_t v);

// ---- experiment config ----

struct InstanceConfig {
    std::string name;
    benchgen::ProblemSpec spec;
};

struct ExperimentConfig {
    std::vector<std::uint64_t> seeds;
    std::size_t threads = 0;

    // stream
    std::vector<InstanceConfig> instances;
    std::vector<std::size_t> samples{600, 750, 900};
    std::optional<std::filesystem::path> stream_file;

    // detectors
    std::vector<std::string> detectors;
    std::optional<std::filesystem::path> checkpoint;
    std::size_t calibration = 60;
    std::size_t fit_samples = 120;
    tokenizer::WindowConfig windows;

    // optimizer
    std::vector<std::string> arms;
    sddea::LoopConfig loop;

    // metrics
    std::size_t delta = 60;

    // output
    std::filesystem::path out_dir = "report";
    bool plots = true;
    std::size_t introspection_sequences = 24;
    /// When set, per-run detection logs and trajectories are written here. Not part of the JSON schema.
    std::optional<std::filesystem::path> log_dir;

    /// Throws ConfigError listing every invalid field.
    void validate() const;
};

/// Parses sections {seeds, stream, detectors, optimizer, metrics, output}.
/// Unknown keys are rejected.
/// Optimizer section on its own (the keys of "optimizer" minus "arms").
sddea::LoopConfig parse_loop_config(const nlohmann::json& j);
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// Fully resolved snapshot (defaults filled in).
nlohmann::json to_json(const ExperimentConfig& cfg);

// ---- report ----

struct ResultRow {
    std::uint64_t seed = 0;
    std::string instance;
    std::string kind;  // "detect" or "optimize"
    std::string method;
    std::map<std::string, double> values;
};

struct Aggregate {
    std::string instance, kind, method, metric;
    std::size_t n = 0;
    double median = 0.0, q1 = 0.0, q3 = 0.0, iqr = 0.0;
};

struct Series {
    std::string label;
    std::vector<double> values;
};

struct AttentionStrip {
    std::string label;
    std::size_t drift_label = 0;
    std::vector<double> weights;
};

struct PcaFigure {
    std::vector<std::array<double, 2>> coords;
    std::vector<std::string> roles;
    std::array<double, 2> explained_ratio{};
    bool degenerate = false;
};

struct Report {
    nlohmann::json config;
    nlohmann::json provenance;
    std::vector<ResultRow> rows;
    std::vector<Aggregate> aggregates;
    std::vector<Series> convergence;
    std::vector<AttentionStrip> attention;
    std::optional<PcaFigure> pca;
    std::string generated_at;  // excluded from determinism comparisons
};

/// Median/IQR per (instance, kind, method, metric), ordered by first appearance.
std::vector<Aggregate> compute_aggregates(std::span<const ResultRow> rows);

/// Runs every seed (in parallel up to cfg.threads) and merges results in seed order.
Report run_experiment(const ExperimentConfig& cfg);

nlohmann::json report_to_json(const Report& report, bool include_timestamp = true);
Report report_from_json(const nlohmann::json& j);

/// Writes report.json, rows.csv, aggregates.csv and (when plots are wanted) SVG figures.
std::vector<std::filesystem::path> emit_report(const Report& report, const std::filesystem::path& out_dir,
                                               bool plots = true);

/// Axis range padded by 5% that always covers [min, max] of the data.
std::pair<double, double> axis_range(std::span<const double> values);

}  // namespace driftlab::harness

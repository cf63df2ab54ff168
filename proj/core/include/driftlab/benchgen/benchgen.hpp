// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "driftlab/random.hpp"

namespace driftlab::benchgen {

enum class DriftKind { kSudden, kIncremental, kRecurrent, kMixed };
enum class BaseFunction { kSphere, kRastrigin, kAckley };

std::string_view to_string(DriftKind kind) noexcept;
std::string_view to_string(BaseFunction fn) noexcept;
DriftKind parse_drift_kind(std::string_view name);
BaseFunction parse_base_function(std::string_view name);

struct DriftConfig {
    DriftKind kind = DriftKind::kSudden;
    /// Drift magnitude in decision-space units. Sudden/recurrent/mixed jumps
    /// draw the optimum within +-severity of the box center; incremental
    /// streams travel severity/env_count per environment.
    double severity = 2.0;
    std::size_t env_count = 10;
    std::size_t recurrence_period = 2;
    std::uint64_t seed = 1;
};

struct Bounds {
    double lo = -5.0;
    double hi = 5.0;
    friend bool operator==(const Bounds&, const Bounds&) = default;
};

struct ProblemSpec {
    BaseFunction base = BaseFunction::kSphere;
    std::size_t dimension = 2;
    std::vector<Bounds> bounds;  // one per dimension; empty means [-5, 5]^d
    DriftConfig drift;
    double noise_std = 0.0;

    /// Throws ConfigError when the spec is unusable.
    void validate() const;
    const Bounds& bound(std::size_t i) const;
};

struct Environment {
    std::size_t index = 0;
    std::vector<double> shift;  // location of the optimum
    double height_offset = 0.0;  // objective value at the optimum
    double scale = 1.0;

    friend bool operator==(const Environment&, const Environment&) = default;
};

/// A problem with its full environment sequence materialized.
struct ProblemState {
    ProblemSpec spec;
    std::vector<Environment> environments;
};

struct StreamRecord {
    std::size_t t = 0;
    int env_id = 0;
    std::vector<double> x;
    double y = 0.0;
    bool new_env = false;

    friend bool operator==(const StreamRecord&, const StreamRecord&) = default;
};

/// Length of each incremental segment inside a mixed stream.
inline constexpr std::size_t kMixedSegmentLength = 5;

ProblemState instantiate(const ProblemSpec& spec);

/// Noise-free objective of `env` at `x`.
double objective(const ProblemState& state, const Environment& env, std::span<const double> x);

/// Closed-form optimum (x*, f*) of an environment.
std::pair<std::vector<double>, double> true_optimum(const ProblemState& state, const Environment& env);

/// Draws a labeled stream; each environment contributes a count drawn uniformly from `per_env_counts`.
std::vector<StreamRecord> sample_stream(const ProblemState& state, std::span<const std::size_t> per_env_counts,
                                        Rng& rng);

/// Default per-environment sample counts.
inline constexpr std::size_t kDefaultSampleCounts[] = {600, 750, 900};

struct StreamFile {
    std::optional<ProblemSpec> spec;
    std::vector<StreamRecord> records;
};

/// One JSON object per line; a header line carries the spec when provided.
void save_stream(const std::filesystem::path& path, std::span<const StreamRecord> records,
                 const ProblemSpec* spec = nullptr);
StreamFile load_stream(const std::filesystem::path& path);

/// Indices t at which a new environment starts (excluding t = 0).
std::vector<std::size_t> drift_points(std::span<const StreamRecord> records);

void to_json(nlohmann::json& j, const ProblemSpec& spec);
void from_json(const nlohmann::json& j, ProblemSpec& spec);

}  // namespace driftlab::benchgen

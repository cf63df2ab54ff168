// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "driftlab/benchgen/benchgen.hpp"
#include "driftlab/detectors/detectors.hpp"
#include "driftlab/random.hpp"
#include "driftlab/surrogate/rbfn.hpp"
#include "driftlab/tokenizer/tokenizer.hpp"

namespace driftlab::sddea {

using FitnessFn = std::function<double(std::span<const double>)>;
using BoxBounds = std::vector<benchgen::Bounds>;

struct Individual {
    std::vector<double> x;
    double fitness = 0.0;
};

struct Population {
    std::vector<Individual> members;

    std::size_t size() const noexcept { return members.size(); }
    /// Lowest fitness; first index on ties. Throws DataError when empty.
    std::size_t best_index() const;
    const Individual& best() const { return members[best_index()]; }
};

struct EAConfig {
    std::size_t pop_size = 50;
    double f = 0.5;
    double cr = 0.9;
    std::size_t generations = 10;
    std::size_t elites = 5;
    double inject_fraction = 0.25;
    std::size_t archive_capacity = 50;
    /// Fitness evaluations inside a generation; 0 = thread cap.
    std::size_t threads = 1;

    void validate() const;
};

/// Uniform random individuals; fitness left at 0 until evaluated.
Population random_population(std::size_t n, const BoxBounds& bounds, Rng& rng);

void evaluate(Population& pop, const FitnessFn& fitness, std::size_t threads = 1);

/// One DE/rand/1/bin generation with greedy (minimizing) selection.
/// Parent fitness values must be current.
Population de_generation(const Population& pop, const FitnessFn& fitness, const BoxBounds& bounds,
                         const EAConfig& cfg, Rng& rng);

struct OptimizeResult {
    Population population;
    std::vector<double> best;
    double best_fitness = 0.0;
};

OptimizeResult optimize_environment(const FitnessFn& fitness, Population pop, const BoxBounds& bounds,
                                    const EAConfig& cfg, Rng& rng);

/// Surrogate-driven variant; throws DataError when the model is missing or unfitted.
OptimizeResult optimize_environment(const surrogate::RbfnModel* model, Population pop, const BoxBounds& bounds,
                                    const EAConfig& cfg, Rng& rng);

struct ArchiveEntry {
    tokenizer::FeatureToken signature;
    std::vector<Individual> elites;  // ascending fitness
    surrogate::RbfnModel surrogate;
    int env_id = -1;  // true environment at close, diagnostics only
};

/// FIFO store of closed environments.
class Archive {
public:
    explicit Archive(std::size_t capacity = 50);

    void push(ArchiveEntry entry);
    std::size_t size() const noexcept { return entries_.size(); }
    std::size_t capacity() const noexcept { return capacity_; }
    /// Oldest first.
    const std::deque<ArchiveEntry>& entries() const noexcept { return entries_; }
    /// Total number of entries ever pushed (evicted ones included).
    std::size_t pushed() const noexcept { return pushed_; }

private:
    std::size_t capacity_;
    std::size_t pushed_ = 0;
    std::deque<ArchiveEntry> entries_;
};

struct ArchiveHit {
    std::size_t index = 0;  // position in Archive::entries()
    double distance = 0.0;
    /// Median prediction error of the entry's surrogate on fresh samples, once reranked.
    std::optional<double> surrogate_error;
};

/// k nearest entries by Euclidean distance on z-scored signatures; newer entries win ties.
std::vector<ArchiveHit> archive_query(const Archive& archive, const tokenizer::FeatureToken& signature,
                                      std::size_t k);

/// Reorders candidates by the median prediction error of their archived
/// surrogate on (xs, ys); stable, so signature order breaks ties.
std::vector<ArchiveHit> rerank_by_surrogate(const Archive& archive, std::span<const ArchiveHit> candidates,
                                            std::span<const std::vector<double>> xs, std::span<const double> ys);

/// Warm-start population: ceil(rho*N) elites round-robin over the hits, the rest uniform.
/// Fitness is left at 0; evaluate before use.
Population transfer(const Archive& archive, std::span<const ArchiveHit> hits, const BoxBounds& bounds,
                    const EAConfig& cfg, Rng& rng);

std::size_t injected_count(const EAConfig& cfg) noexcept;

/// Distribution summary of objective values; the archive signature of an environment.
tokenizer::FeatureToken environment_signature(std::span<const double> ys);

struct LoopConfig {
    EAConfig ea;
    std::size_t batch_size = 15;
    std::size_t buffer_capacity = 300;
    /// Refit the surrogate after this many stable batches.
    std::size_t refit_every = 5;
    /// Post-drift samples needed before the first refit.
    std::size_t min_fit = 60;
    /// Signature-nearest entries considered, then reranked by surrogate error.
    std::size_t archive_candidates = 3;
    std::size_t archive_hits = 1;
    double ridge = 1e-8;
    std::uint64_t seed = 1;

    void validate() const;
};

struct TrajectoryRecord {
    std::size_t batch = 0;
    std::size_t t = 0;  // stream time of the last sample in the batch
    int env_id = 0;
    std::size_t detected_env = 0;  // lineage counter, bumped on each detection
    std::vector<double> incumbent;
    std::optional<double> surrogate_fitness;
    std::optional<double> true_fitness;
    std::optional<double> optimum;  // true f* of env_id
    bool drift_event = false;
    std::optional<int> transfer_from;  // env_id of the nearest archive hit used for warm start

    friend bool operator==(const TrajectoryRecord&, const TrajectoryRecord&) = default;
};

struct Trajectory {
    std::vector<TrajectoryRecord> records;
    std::size_t archive_size = 0;
    std::size_t lineages = 1;
};

/// Detection-adaptation loop. `truth` (optional) scores incumbents on the true objective.
Trajectory run_trace_ea(std::span<const benchgen::StreamRecord> stream, detectors::StreamDetector& detector,
                        const BoxBounds& bounds, const LoopConfig& cfg, const benchgen::ProblemState* truth = nullptr);

/// Mean gap f(x_best) - f*; DataError on length mismatch or empty input.
double compute_edt(std::span<const double> incumbent_values, std::span<const double> optima);
/// Uses true_fitness/optimum of every record; DataError if any is missing.
double compute_edt(const Trajectory& trajectory);

void save_trajectory(const std::filesystem::path& path, const Trajectory& trajectory);
Trajectory load_trajectory(const std::filesystem::path& path);

}  // namespace driftlab::sddea

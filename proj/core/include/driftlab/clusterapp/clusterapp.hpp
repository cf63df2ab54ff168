// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "driftlab/detectors/detectors.hpp"
#include "driftlab/sddea/sddea.hpp"

namespace driftlab::clusterapp {

using Point = std::vector<double>;

inline constexpr std::size_t kDefaultMaxClusters = 8;
/// Returned for degenerate candidates (coincident active centers).
inline constexpr double kDegeneratePenalty = std::numeric_limits<double>::infinity();

/// Candidate length for k_max centers in d dimensions: k_max centers plus one activation gene each.
constexpr std::size_t candidate_length(std::size_t dimension, std::size_t k_max) noexcept {
    return k_max * (dimension + 1);
}

/// Layout: k_max centers (d reals each), then k_max activation genes.
/// A center is active iff its gene > 0.5; with fewer than two, the two highest genes win.
std::vector<Point> decode(std::span<const double> candidate, std::size_t dimension,
                          std::size_t k_max = kDefaultMaxClusters);

/// Davies-Bouldin index with nearest-center assignment; lower is better.
double dbi(std::span<const Point> points, std::span<const Point> centers);

struct DataBatch {
    std::vector<Point> points;
    std::vector<std::string> features;
    std::size_t index = 0;
};

double clustering_objective(const DataBatch& batch, std::span<const double> candidate,
                            std::size_t k_max = kDefaultMaxClusters);

struct IngestionReport {
    std::size_t rows_read = 0;
    std::size_t rows_dropped = 0;
    std::size_t batches = 0;
};

/// Streams fixed-size batches of the selected numeric columns. Min-max scaling
/// is fitted on the first batch and reused; a constant column maps to 0.
class CsvBatchReader {
public:
    /// Empty `columns` selects every column.
    CsvBatchReader(const std::filesystem::path& path, std::vector<std::string> columns, std::size_t batch_size);

    std::optional<DataBatch> next();
    const IngestionReport& report() const noexcept { return report_; }
    const std::vector<std::string>& features() const noexcept { return names_; }

private:
    std::ifstream in_;
    std::string path_;
    std::vector<std::string> names_;
    std::vector<std::size_t> picks_;
    std::size_t header_width_ = 0;
    std::size_t batch_size_;
    std::vector<double> lo_, range_;
    bool scaler_ready_ = false;
    IngestionReport report_;
};

std::vector<DataBatch> ingest_csv(const std::filesystem::path& path, std::vector<std::string> columns,
                                  std::size_t batch_size, IngestionReport* report = nullptr);

struct ClusterLoopConfig {
    sddea::LoopConfig loop;
    std::size_t k_max = kDefaultMaxClusters;
    /// Candidate evaluations drawn per data batch; these form the optimizer's sample stream.
    std::size_t samples_per_batch = 150;
};

struct ClusterBatchResult {
    std::size_t batch = 0;
    std::size_t rows = 0;
    double dbi = 0.0;  // incumbent at the end of the batch, on that batch
    bool drift_event = false;
};

/// Samples random candidates per data batch, labels them with their DBI, and
/// runs the detection-adaptation loop over the resulting stream.
std::vector<ClusterBatchResult> run_clustering(std::span<const DataBatch> batches,
                                               detectors::StreamDetector& detector, const ClusterLoopConfig& cfg);

}  // namespace driftlab::clusterapp

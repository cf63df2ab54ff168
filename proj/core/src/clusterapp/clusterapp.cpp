// SPDX-License-Identifier: Apache-2.0
#include "driftlab/clusterapp/clusterapp.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include "driftlab/error.hpp"

namespace driftlab::clusterapp {

std::vector<Point> decode(std::span<const double> candidate, std::size_t dimension, std::size_t k_max) {
    if (dimension == 0 || k_max < 2) throw ConfigError("decode needs dimension >= 1 and k_max >= 2");
    if (candidate.size() != candidate_length(dimension, k_max)) {
        throw DataError("candidate length " + std::to_string(candidate.size()) + " != " +
                        std::to_string(candidate_length(dimension, k_max)));
    }
    const auto genes = candidate.subspan(k_max * dimension);
    std::vector<bool> active(k_max);
    std::size_t count = 0;
    for (std::size_t i = 0; i < k_max; ++i) {
        active[i] = genes[i] > 0.5;
        count += active[i] ? 1 : 0;
    }
    if (count < 2) {
        // Repair: the two highest genes; lower index wins ties.
        std::vector<std::size_t> order(k_max);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return genes[a] > genes[b]; });
        active[order[0]] = active[order[1]] = true;
    }
    std::vector<Point> centers;
    for (std::size_t i = 0; i < k_max; ++i) {
        if (!active[i]) continue;
        const auto c = candidate.subspan(i * dimension, dimension);
        centers.emplace_back(c.begin(), c.end());
    }
    return centers;
}

namespace {

double distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return std::sqrt(s);
}

}  // namespace

double dbi(std::span<const Point> points, std::span<const Point> centers) {
    const std::size_t k = centers.size();
    if (k < 2) throw DataError("DBI needs at least two active centers");
    std::vector<double> spread(k, 0.0);
    std::vector<std::size_t> members(k, 0);
    for (const auto& p : points) {
        std::size_t best = 0;
        double best_d = distance(p, centers[0]);
        for (std::size_t c = 1; c < k; ++c) {
            const double d = distance(p, centers[c]);
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        spread[best] += best_d;
        ++members[best];
    }
    for (std::size_t c = 0; c < k; ++c) {
        if (members[c] > 0) spread[c] /= static_cast<double>(members[c]);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        double worst = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            if (j == i) continue;
            const double m = distance(centers[i], centers[j]);
            if (m == 0.0) return kDegeneratePenalty;
            worst = std::max(worst, (spread[i] + spread[j]) / m);
        }
        total += worst;
    }
    return total / static_cast<double>(k);
}

double clustering_objective(const DataBatch& batch, std::span<const double> candidate, std::size_t k_max) {
    if (batch.points.empty()) throw DataError("clustering objective on an empty batch");
    const auto centers = decode(candidate, batch.points.front().size(), k_max);
    return dbi(batch.points, centers);
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

std::optional<double> parse_number(const std::string& cell) {
    const std::string s = trim(cell);
    if (s.empty()) return std::nullopt;
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v)) return std::nullopt;
    return v;
}

}  // namespace

CsvBatchReader::CsvBatchReader(const std::filesystem::path& path, std::vector<std::string> columns,
                               std::size_t batch_size)
    : in_(path, std::ios::binary), path_(path.string()), batch_size_(batch_size) {
    if (batch_size_ == 0) throw ConfigError("batch size must be positive");
    if (!in_) throw DataError("cannot open CSV file: " + path_);
    std::string line;
    if (!std::getline(in_, line)) throw DataError(path_ + ": missing header row");
    std::vector<std::string> header = split_csv(line);
    for (auto& h : header) h = trim(h);
    header_width_ = header.size();
    if (columns.empty()) columns = header;
    for (const auto& c : columns) {
        const auto it = std::find(header.begin(), header.end(), c);
        if (it == header.end()) throw ConfigError(path_ + ": missing column '" + c + "'");
        picks_.push_back(static_cast<std::size_t>(it - header.begin()));
        names_.push_back(c);
    }
}

std::optional<DataBatch> CsvBatchReader::next() {
    DataBatch batch;
    batch.features = names_;
    batch.index = report_.batches;
    std::string line;
    while (batch.points.size() < batch_size_ && std::getline(in_, line)) {
        if (trim(line).empty() || line == "\r") continue;
        ++report_.rows_read;
        const auto cells = split_csv(line);
        if (cells.size() != header_width_) {
            ++report_.rows_dropped;
            continue;
        }
        Point p;
        p.reserve(picks_.size());
        for (std::size_t c : picks_) {
            const auto v = parse_number(cells[c]);
            if (!v) break;
            p.push_back(*v);
        }
        if (p.size() != picks_.size()) {
            ++report_.rows_dropped;
            continue;
        }
        batch.points.push_back(std::move(p));
    }
    if (batch.points.empty()) return std::nullopt;

    const std::size_t d = picks_.size();
    if (!scaler_ready_) {
        lo_.assign(d, 0.0);
        range_.assign(d, 0.0);
        for (std::size_t j = 0; j < d; ++j) {
            double lo = batch.points[0][j], hi = lo;
            for (const auto& p : batch.points) {
                lo = std::min(lo, p[j]);
                hi = std::max(hi, p[j]);
            }
            lo_[j] = lo;
            range_[j] = hi - lo;
        }
        scaler_ready_ = true;
    }
    for (auto& p : batch.points) {
        for (std::size_t j = 0; j < d; ++j) p[j] = range_[j] > 0.0 ? (p[j] - lo_[j]) / range_[j] : 0.0;
    }
    ++report_.batches;
    return batch;
}

std::vector<DataBatch> ingest_csv(const std::filesystem::path& path, std::vector<std::string> columns,
                                  std::size_t batch_size, IngestionReport* report) {
    CsvBatchReader reader(path, std::move(columns), batch_size);
    std::vector<DataBatch> out;
    while (auto b = reader.next()) out.push_back(std::move(*b));
    if (report) *report = reader.report();
    return out;
}

std::vector<ClusterBatchResult> run_clustering(std::span<const DataBatch> batches,
                                               detectors::StreamDetector& detector, const ClusterLoopConfig& cfg) {
    if (batches.empty()) return {};
    const std::size_t d = batches.front().points.at(0).size();
    const std::size_t len = candidate_length(d, cfg.k_max);
    const sddea::BoxBounds bounds(len, benchgen::Bounds{0.0, 1.0});
    Rng rng(derive_seed(cfg.loop.seed, {0xc1}));

    std::vector<benchgen::StreamRecord> stream;
    stream.reserve(batches.size() * cfg.samples_per_batch);
    for (std::size_t b = 0; b < batches.size(); ++b) {
        for (std::size_t s = 0; s < cfg.samples_per_batch; ++s) {
            benchgen::StreamRecord r;
            r.t = stream.size();
            r.env_id = static_cast<int>(b);
            r.new_env = b > 0 && s == 0;
            r.x.resize(len);
            // Redraw the (measure-zero) coincident-center case so surrogate targets stay finite.
            do {
                for (auto& v : r.x) v = uniform01(rng);
                r.y = clustering_objective(batches[b], r.x, cfg.k_max);
            } while (!std::isfinite(r.y));
            stream.push_back(std::move(r));
        }
    }

    const auto traj = sddea::run_trace_ea(stream, detector, bounds, cfg.loop);
    std::vector<ClusterBatchResult> out(batches.size());
    std::vector<const sddea::TrajectoryRecord*> last(batches.size(), nullptr);
    for (const auto& r : traj.records) {
        const auto b = static_cast<std::size_t>(r.env_id);
        last[b] = &r;
        out[b].drift_event = out[b].drift_event || r.drift_event;
    }
    for (std::size_t b = 0; b < batches.size(); ++b) {
        out[b].batch = b;
        out[b].rows = batches[b].points.size();
        out[b].dbi = last[b] ? clustering_objective(batches[b], last[b]->incumbent, cfg.k_max) : kDegeneratePenalty;
    }
    return out;
}

}  // namespace driftlab::clusterapp

// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "driftlab/error.hpp"
#include "driftlab/harness/harness.hpp"

namespace driftlab::harness {

DetectionOutcome detection_metrics(std::span<const std::size_t> truths, std::span<const std::size_t> detections,
                                   std::size_t delta) {
    if (!std::is_sorted(truths.begin(), truths.end())) throw DataError("drift truths must be ascending");
    if (!std::is_sorted(detections.begin(), detections.end())) throw DataError("detections must be ascending");
    DetectionOutcome out;
    std::vector<bool> used(truths.size(), false);
    for (std::size_t det : detections) {
        bool hit = false;
        for (std::size_t i = 0; i < truths.size(); ++i) {
            if (used[i] || truths[i] > det) continue;
            if (det - truths[i] > delta) continue;
            used[i] = true;
            out.delays.push_back(det - truths[i]);
            hit = true;
            break;
        }
        if (hit) {
            ++out.tp;
        } else {
            ++out.fp;
        }
    }
    out.fn = truths.size() - out.tp;
    if (detections.empty()) {
        out.precision = truths.empty() ? 1.0 : 0.0;
    } else {
        out.precision = static_cast<double>(out.tp) / static_cast<double>(detections.size());
    }
    out.recall = truths.empty() ? 1.0 : static_cast<double>(out.tp) / static_cast<double>(truths.size());
    const double s = out.precision + out.recall;
    out.f1 = s > 0.0 ? 2.0 * out.precision * out.recall / s : 0.0;
    if (!out.delays.empty()) {
        double sum = 0.0;
        for (std::size_t d : out.delays) sum += static_cast<double>(d);
        out.mean_delay = sum / static_cast<double>(out.delays.size());
    }
    return out;
}

namespace {

using Matrix = std::vector<std::vector<double>>;

std::vector<double> mat_vec(const Matrix& a, const std::vector<double>& v) {
    std::vector<double> out(a.size(), 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < v.size(); ++j) out[i] += a[i][j] * v[j];
    }
    return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

bool normalize(std::vector<double>& v) {
    const double n = std::sqrt(dot(v, v));
    if (!(n > 0.0)) return false;
    for (double& x : v) x /= n;
    return true;
}

void orthogonalize(std::vector<double>& v, const std::vector<std::vector<double>>& basis) {
    for (const auto& b : basis) {
        const double p = dot(v, b);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= p * b[i];
    }
}

std::vector<double> start_vector(std::size_t d, std::size_t which) {
    // Fixed, non-symmetric start so no axis is orthogonal to it by construction.
    std::vector<double> v(d);
    for (std::size_t i = 0; i < d; ++i) v[i] = 1.0 + 0.37 * static_cast<double>((i * 7 + which * 3) % 11);
    return v;
}

}  // namespace

PcaResult pca_2d(std::span<const std::vector<double>> rows, const PcaOptions& opt) {
    const std::size_t m = rows.size();
    if (m < 3) throw DataError("PCA needs at least 3 rows");
    const std::size_t d = rows.front().size();
    if (d == 0) throw DataError("PCA rows are empty");
    for (const auto& r : rows) {
        if (r.size() != d) throw DimensionError("PCA rows have different lengths");
    }
    std::vector<double> mean(d, 0.0);
    for (const auto& r : rows) {
        for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
    }
    for (double& v : mean) v /= static_cast<double>(m);
    Matrix centered(m, std::vector<double>(d));
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < d; ++j) centered[i][j] = rows[i][j] - mean[j];
    }
    Matrix cov(d, std::vector<double>(d, 0.0));
    for (const auto& r : centered) {
        for (std::size_t a = 0; a < d; ++a) {
            for (std::size_t b = 0; b < d; ++b) cov[a][b] += r[a] * r[b];
        }
    }
    double trace = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b < d; ++b) cov[a][b] /= static_cast<double>(m - 1);
        trace += cov[a][a];
    }

    PcaResult out;
    out.coords.assign(m, {0.0, 0.0});
    out.components = {std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    if (!(trace > 0.0)) {
        out.degenerate = true;
        return out;
    }

    Matrix work = cov;
    std::vector<std::vector<double>> found;
    const std::size_t k = std::min<std::size_t>(2, d);
    for (std::size_t c = 0; c < k; ++c) {
        std::vector<double> v = start_vector(d, c);
        orthogonalize(v, found);
        if (!normalize(v)) v.assign(d, 0.0);
        for (std::size_t it = 0; it < opt.iterations; ++it) {
            std::vector<double> next = mat_vec(work, v);
            orthogonalize(next, found);
            if (!normalize(next)) break;  // remaining spectrum is zero
            double change = 0.0;
            for (std::size_t i = 0; i < d; ++i) change = std::max(change, std::fabs(next[i] - v[i]));
            v = std::move(next);
            if (change < opt.tolerance) break;
        }
        // Sign convention: largest-magnitude loading positive.
        std::size_t arg = 0;
        for (std::size_t i = 1; i < d; ++i) {
            if (std::fabs(v[i]) > std::fabs(v[arg])) arg = i;
        }
        if (v[arg] < 0.0) {
            for (double& x : v) x = -x;
        }
        const double lambda = std::max(0.0, dot(v, mat_vec(cov, v)));
        for (std::size_t a = 0; a < d; ++a) {
            for (std::size_t b = 0; b < d; ++b) work[a][b] -= lambda * v[a] * v[b];
        }
        out.explained_variance[c] = lambda;
        out.explained_ratio[c] = lambda / trace;
        out.components[c] = v;
        found.push_back(std::move(v));
    }
    for (std::size_t i = 0; i < m; ++i) {
        out.coords[i][0] = dot(centered[i], out.components[0]);
        out.coords[i][1] = dot(centered[i], out.components[1]);
    }
    return out;
}

double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw DataError("quantile of an empty sample");
    std::sort(v.begin(), v.end());
    const double h = q * static_cast<double>(v.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(h));
    if (i + 1 >= v.size()) return v.back();
    return v[i] + (h - static_cast<double>(i)) * (v[i + 1] - v[i]);
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t seed) noexcept {
    std::uint64_t h = seed;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

template <class T>
std::uint64_t mix_in(std::uint64_t h, const T& v) noexcept {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    return fnv1a64(buf, h);
}

}  // namespace

std::uint64_t stream_hash(std::span<const benchgen::StreamRecord> records) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& r : records) {
        h = mix_in(h, static_cast<std::uint64_t>(r.t));
        h = mix_in(h, static_cast<std::int64_t>(r.env_id));
        for (double x : r.x) h = mix_in(h, std::bit_cast<std::uint64_t>(x));
        h = mix_in(h, std::bit_cast<std::uint64_t>(r.y));
        h = mix_in(h, static_cast<std::uint8_t>(r.new_env));
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::vector<Aggregate> compute_aggregates(std::span<const ResultRow> rows) {
    struct Key {
        std::string instance, kind, method, metric;
        bool operator==(const Key&) const = default;
    };
    std::vector<Key> keys;
    std::vector<std::vector<double>> samples;
    for (const auto& r : rows) {
        for (const auto& [metric, value] : r.values) {
            Key k{r.instance, r.kind, r.method, metric};
            auto it = std::find(keys.begin(), keys.end(), k);
            if (it == keys.end()) {
                keys.push_back(k);
                samples.emplace_back();
                it = keys.end() - 1;
            }
            samples[static_cast<std::size_t>(it - keys.begin())].push_back(value);
        }
    }
    std::vector<Aggregate> out;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        Aggregate a;
        a.instance = keys[i].instance;
        a.kind = keys[i].kind;
        a.method = keys[i].method;
        a.metric = keys[i].metric;
        a.n = samples[i].size();
        a.median = quantile(samples[i], 0.5);
        a.q1 = quantile(samples[i], 0.25);
        a.q3 = quantile(samples[i], 0.75);
        a.iqr = a.q3 - a.q1;
        out.push_back(std::move(a));
    }
    return out;
}

std::pair<double, double> axis_range(std::span<const double> values) {
    double lo = 0.0, hi = 1.0;
    bool any = false;
    for (double v : values) {
        if (!std::isfinite(v)) continue;
        if (!any) {
            lo = hi = v;
            any = true;
        }
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (!any) return {0.0, 1.0};
    const double pad = hi > lo ? 0.05 * (hi - lo) : std::max(0.5, 0.05 * std::fabs(lo));
    return {lo - pad, hi + pad};
}

}  // namespace driftlab::harness

// SPDX-License-Identifier: Apache-2.0
#include "driftlab/surrogate/rbfn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <Eigen/Dense>

#include "driftlab/error.hpp"
#include "driftlab/random.hpp"

namespace driftlab::surrogate {

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

std::vector<std::vector<double>> kmeans(std::span<const std::vector<double>> xs, std::size_t k,
                                        std::size_t iterations, std::uint64_t seed) {
    const std::size_t n = xs.size();
    const std::size_t d = xs.front().size();
    Rng rng(seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(order[i], order[pick(rng)]);
    }
    std::vector<std::vector<double>> centers;
    centers.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        centers.push_back(xs[order[i]]);
    }
    if (k == n) {
        return centers;
    }
    std::vector<std::size_t> assign(n, 0);
    std::vector<double> sums(k * d);
    std::vector<std::size_t> counts(k);
    for (std::size_t it = 0; it < iterations; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = squared_distance(xs[i], centers[0]);
            for (std::size_t c = 1; c < k; ++c) {
                const double dc = squared_distance(xs[i], centers[c]);
                if (dc < best_d) {
                    best_d = dc;
                    best = c;
                }
            }
            if (it == 0 || assign[i] != best) {
                changed = true;
            }
            assign[i] = best;
        }
        if (!changed) {
            break;
        }
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            counts[assign[i]] += 1;
            for (std::size_t j = 0; j < d; ++j) {
                sums[assign[i] * d + j] += xs[i][j];
            }
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                continue;  // empty cluster keeps its previous center
            }
            for (std::size_t j = 0; j < d; ++j) {
                centers[c][j] = sums[c * d + j] / static_cast<double>(counts[c]);
            }
        }
    }
    return centers;
}

double median_of(std::vector<double> v) {
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double hi = v[mid];
    if (v.size() % 2 == 1) {
        return hi;
    }
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

double choose_width(const std::vector<std::vector<double>>& centers, std::span<const std::vector<double>> xs) {
    const std::size_t k = centers.size();
    if (k >= 2) {
        std::vector<double> pairwise;
        pairwise.reserve(k * (k - 1) / 2);
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = i + 1; j < k; ++j) {
                pairwise.push_back(std::sqrt(squared_distance(centers[i], centers[j])));
            }
        }
        const double med = median_of(std::move(pairwise));
        if (med > 0.0) {
            return med;
        }
        double nn_sum = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < k; ++j) {
                if (i != j) {
                    best = std::min(best, std::sqrt(squared_distance(centers[i], centers[j])));
                }
            }
            nn_sum += best;
        }
        if (nn_sum > 0.0) {
            return nn_sum / static_cast<double>(k);
        }
    }
    // spread of the data around the (single) center
    double spread = 0.0;
    for (const auto& x : xs) {
        spread += std::sqrt(squared_distance(x, centers.front()));
    }
    return spread / static_cast<double>(xs.size());
}

}  // namespace

std::size_t default_center_count(std::size_t samples) noexcept {
    return std::min<std::size_t>(25, (samples + 3) / 4);
}

std::vector<double> design_matrix(const RbfnModel& model, std::span<const std::vector<double>> xs) {
    const std::size_t k = model.centers.size();
    const double inv = 1.0 / (2.0 * model.width * model.width);
    std::vector<double> phi(xs.size() * (k + 1));
    for (std::size_t i = 0; i < xs.size(); ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            phi[i * (k + 1) + j] = std::exp(-squared_distance(xs[i], model.centers[j]) * inv);
        }
        phi[i * (k + 1) + k] = 1.0;
    }
    return phi;
}

std::pair<RbfnModel, FitReport> fit_rbfn(std::span<const std::vector<double>> xs, std::span<const double> ys,
                                         const FitOptions& options) {
    if (xs.size() != ys.size()) {
        throw DimensionError("fit_rbfn: inputs and targets differ in count");
    }
    const std::size_t n = xs.size();
    const std::size_t k = options.centers == 0 ? default_center_count(n) : options.centers;
    if (n == 0 || k == 0 || n < k) {
        throw ConfigError("fit_rbfn: need at least as many samples (" + std::to_string(n) + ") as centers (" +
                          std::to_string(k) + ")");
    }
    if (!(options.ridge >= 0.0)) {
        throw ConfigError("fit_rbfn: ridge must be nonnegative");
    }
    const std::size_t d = xs.front().size();
    if (d == 0) {
        throw DimensionError("fit_rbfn: zero-dimensional inputs");
    }
    bool all_same = true;
    for (const auto& x : xs) {
        if (x.size() != d) {
            throw DimensionError("fit_rbfn: inconsistent input dimensions");
        }
        if (all_same && x != xs.front()) {
            all_same = false;
        }
    }
    if (all_same) {
        throw ConfigError("fit_rbfn: all inputs are identical");
    }
    for (double y : ys) {
        if (!std::isfinite(y)) {
            throw NumericError("fit_rbfn: non-finite target");
        }
    }

    RbfnModel model;
    model.centers = kmeans(xs, k, options.kmeans_iterations, options.seed);
    model.width = choose_width(model.centers, xs);
    if (!(model.width > 0.0) || !std::isfinite(model.width)) {
        throw ConfigError("fit_rbfn: degenerate inputs give a zero kernel width");
    }

    const std::size_t cols = k + 1;
    const std::vector<double> phi = design_matrix(model, xs);
    const bool ridge = options.ridge > 0.0;
    // The intercept is not penalized, so constant targets are fitted exactly by the bias.
    const std::size_t rows = n + (ridge ? k : 0);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rows));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = phi[i * cols + j];
        }
        b(static_cast<Eigen::Index>(i)) = ys[i];
    }
    if (ridge) {
        const double s = std::sqrt(options.ridge);
        for (std::size_t j = 0; j < k; ++j) {
            a(static_cast<Eigen::Index>(n + j), static_cast<Eigen::Index>(j)) = s;
        }
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    const Eigen::VectorXd w = qr.solve(b);
    if (!w.allFinite()) {
        throw NumericError("fit_rbfn: least-squares solve produced non-finite weights");
    }
    model.weights.assign(w.data(), w.data() + k);
    model.bias = w(static_cast<Eigen::Index>(k));

    FitReport report;
    const auto diag = qr.matrixQR().diagonal().cwiseAbs();
    const double dmin = diag.minCoeff();
    report.condition_indicator = dmin > 0.0 ? diag.maxCoeff() / dmin : std::numeric_limits<double>::infinity();
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = predict(model, xs[i]) - ys[i];
        ss += r * r;
    }
    report.rms_residual = std::sqrt(ss / static_cast<double>(n));
    return {std::move(model), report};
}

double predict(const RbfnModel& model, std::span<const double> x) {
    if (x.size() != model.dimension()) {
        throw DimensionError("predict: x has " + std::to_string(x.size()) + " entries, expected " +
                             std::to_string(model.dimension()));
    }
    const double inv = 1.0 / (2.0 * model.width * model.width);
    double y = model.bias;
    for (std::size_t j = 0; j < model.centers.size(); ++j) {
        y += model.weights[j] * std::exp(-squared_distance(x, model.centers[j]) * inv);
    }
    return y;
}

double prediction_error(double y, double y_hat) noexcept {
    if (y != 0.0) {
        return std::abs((y - y_hat) / y);
    }
    return std::abs(y - y_hat);
}

SurrogateTracker::SurrogateTracker(SurrogatePolicy policy) : policy_(policy) {
    if (policy_.fit_samples < 2) {
        throw ConfigError("surrogate fit_samples must be at least 2");
    }
}

std::optional<double> SurrogateTracker::observe(std::span<const double> x, double y) {
    if (model_) {
        return prediction_error(y, predict(*model_, x));
    }
    xs_.emplace_back(x.begin(), x.end());
    ys_.push_back(y);
    if (xs_.size() >= policy_.fit_samples) {
        FitOptions opts;
        opts.centers = policy_.centers;
        opts.ridge = policy_.ridge;
        opts.seed = derive_seed(policy_.seed, {fit_count_});
        model_ = fit_rbfn(xs_, ys_, opts).first;
        ++fit_count_;
        xs_.clear();
        ys_.clear();
    }
    return std::nullopt;
}

void SurrogateTracker::reset() {
    model_.reset();
    xs_.clear();
    ys_.clear();
}

}  // namespace driftlab::surrogate

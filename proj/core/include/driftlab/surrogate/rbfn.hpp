// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace driftlab::surrogate {

/// Gaussian radial-basis-function network with a shared width.
struct RbfnModel {
    std::vector<std::vector<double>> centers;
    double width = 1.0;
    std::vector<double> weights;
    double bias = 0.0;

    std::size_t dimension() const noexcept { return centers.empty() ? 0 : centers.front().size(); }
    friend bool operator==(const RbfnModel&, const RbfnModel&) = default;
};

struct FitReport {
    double rms_residual = 0.0;
    /// Ratio of the largest to smallest |R_ii| of the pivoted QR factor.
    double condition_indicator = 1.0;
};

struct FitOptions {
    /// 0 selects min(25, ceil(n / 4)).
    std::size_t centers = 0;
    double ridge = 1e-8;
    std::uint64_t seed = 0;
    std::size_t kmeans_iterations = 20;
};

std::size_t default_center_count(std::size_t samples) noexcept;

std::pair<RbfnModel, FitReport> fit_rbfn(std::span<const std::vector<double>> xs, std::span<const double> ys,
                                         const FitOptions& options = {});

double predict(const RbfnModel& model, std::span<const double> x);

/// Relative error |(y - y_hat) / y|, or the absolute error when y == 0.
double prediction_error(double y, double y_hat) noexcept;

/// Gaussian design matrix (n × (k + 1), trailing bias column of ones), row-major.
std::vector<double> design_matrix(const RbfnModel& model, std::span<const std::vector<double>> xs);

struct SurrogatePolicy {
    /// Samples collected after a reset before the surrogate is fitted.
    std::size_t fit_samples = 120;
    std::size_t centers = 0;
    double ridge = 1e-8;
    std::uint64_t seed = 0;
};

/// Owns the surrogate lifecycle of a stream consumer: buffer after reset,
/// fit once, then emit one prediction error per observed sample.
class SurrogateTracker {
public:
    explicit SurrogateTracker(SurrogatePolicy policy = {});

    /// Error of the current surrogate on (x, y); nullopt while warming up.
    std::optional<double> observe(std::span<const double> x, double y);

    void reset();

    bool ready() const noexcept { return model_.has_value(); }
    const RbfnModel* model() const noexcept { return model_ ? &*model_ : nullptr; }
    std::size_t fit_count() const noexcept { return fit_count_; }
    const SurrogatePolicy& policy() const noexcept { return policy_; }

private:
    SurrogatePolicy policy_;
    std::vector<std::vector<double>> xs_;
    std::vector<double> ys_;
    std::optional<RbfnModel> model_;
    std::size_t fit_count_ = 0;
};

}  // namespace driftlab::surrogate

// SPDX-License-Identifier: Apache-2.0
#include "driftlab/benchgen/benchgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "driftlab/error.hpp"

namespace driftlab::benchgen {

using nlohmann::json;

std::string_view to_string(DriftKind kind) noexcept {
    switch (kind) {
        case DriftKind::kSudden: return "sudden";
        case DriftKind::kIncremental: return "incremental";
        case DriftKind::kRecurrent: return "recurrent";
        case DriftKind::kMixed: return "mixed";
    }
    return "unknown";
}

std::string_view to_string(BaseFunction fn) noexcept {
    switch (fn) {
        case BaseFunction::kSphere: return "sphere";
        case BaseFunction::kRastrigin: return "rastrigin";
        case BaseFunction::kAckley: return "ackley";
    }
    return "unknown";
}

DriftKind parse_drift_kind(std::string_view name) {
    for (DriftKind k : {DriftKind::kSudden, DriftKind::kIncremental, DriftKind::kRecurrent, DriftKind::kMixed}) {
        if (to_string(k) == name) {
            return k;
        }
    }
    throw ConfigError("unknown drift kind '" + std::string(name) + "'");
}

BaseFunction parse_base_function(std::string_view name) {
    for (BaseFunction f : {BaseFunction::kSphere, BaseFunction::kRastrigin, BaseFunction::kAckley}) {
        if (to_string(f) == name) {
            return f;
        }
    }
    throw ConfigError("unknown base function '" + std::string(name) + "'");
}

namespace {

const Bounds kDefaultBounds{-5.0, 5.0};

double min_half_width(const ProblemSpec& spec) {
    double h = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < spec.dimension; ++i) {
        h = std::min(h, 0.5 * (spec.bound(i).hi - spec.bound(i).lo));
    }
    return h;
}

double base_value(BaseFunction fn, std::span<const double> z) {
    const double d = static_cast<double>(z.size());
    switch (fn) {
        case BaseFunction::kSphere: {
            double s = 0.0;
            for (double v : z) {
                s += v * v;
            }
            return s;
        }
        case BaseFunction::kRastrigin: {
            double s = 10.0 * d;
            for (double v : z) {
                s += v * v - 10.0 * std::cos(2.0 * std::numbers::pi * v);
            }
            return s;
        }
        case BaseFunction::kAckley: {
            constexpr double a = 20.0, b = 0.2, c = 2.0 * std::numbers::pi;
            double sq = 0.0, cs = 0.0;
            for (double v : z) {
                sq += v * v;
                cs += std::cos(c * v);
            }
            return -a * std::exp(-b * std::sqrt(sq / d)) - std::exp(cs / d) + a + std::numbers::e;
        }
    }
    return 0.0;
}

class EnvironmentBuilder {
public:
    explicit EnvironmentBuilder(const ProblemSpec& spec) : spec_(spec), rng_(spec.drift.seed) {
        const std::size_t d = spec.dimension;
        center_.resize(d);
        half_.resize(d);
        for (std::size_t i = 0; i < d; ++i) {
            center_[i] = 0.5 * (spec.bound(i).lo + spec.bound(i).hi);
            half_[i] = 0.5 * (spec.bound(i).hi - spec.bound(i).lo);
        }
        relative_severity_ = std::min(1.0, spec.drift.severity / min_half_width(spec));
    }

    Environment jump(std::size_t index) {
        Environment env;
        env.index = index;
        env.shift.resize(center_.size());
        for (std::size_t i = 0; i < center_.size(); ++i) {
            env.shift[i] = center_[i] + spec_.drift.severity * uniform(rng_, -1.0, 1.0);
        }
        env.scale = std::exp(0.5 * relative_severity_ * uniform(rng_, -1.0, 1.0));
        env.height_offset = 0.0;
        return env;
    }

    Environment start_point(std::size_t index) {
        Environment env;
        env.index = index;
        env.shift.resize(center_.size());
        for (std::size_t i = 0; i < center_.size(); ++i) {
            env.shift[i] = center_[i] + kInnerFraction * half_[i] * uniform(rng_, -1.0, 1.0);
        }
        return env;
    }

    void new_direction() {
        std::normal_distribution<double> gauss(0.0, 1.0);
        direction_.assign(center_.size(), 0.0);
        double norm = 0.0;
        while (norm < 1e-12) {
            norm = 0.0;
            for (double& v : direction_) {
                v = gauss(rng_);
                norm += v * v;
            }
            norm = std::sqrt(norm);
        }
        for (double& v : direction_) {
            v /= norm;
        }
    }

    /// Moves by `step` along the current direction, flipping components that would leave the inner box.
    Environment step(const Environment& prev, std::size_t index, double step) {
        if (direction_.empty()) {
            new_direction();
        }
        Environment env = prev;
        env.index = index;
        for (std::size_t i = 0; i < center_.size(); ++i) {
            const double lo = center_[i] - kInnerFraction * half_[i];
            const double hi = center_[i] + kInnerFraction * half_[i];
            double next = prev.shift[i] + step * direction_[i];
            if (next < lo || next > hi) {
                direction_[i] = -direction_[i];
                next = prev.shift[i] + step * direction_[i];
            }
            if (next < lo - 1e-12 || next > hi + 1e-12) {
                throw ConfigError("incremental drift step " + std::to_string(step) +
                                  " cannot stay inside the search box");
            }
            env.shift[i] = next;
        }
        return env;
    }

private:
    static constexpr double kInnerFraction = 0.8;

    const ProblemSpec& spec_;
    Rng rng_;
    std::vector<double> center_;
    std::vector<double> half_;
    std::vector<double> direction_;
    double relative_severity_ = 0.0;
};

}  // namespace

const Bounds& ProblemSpec::bound(std::size_t i) const {
    if (bounds.empty()) {
        return kDefaultBounds;
    }
    return bounds.at(i);
}

void ProblemSpec::validate() const {
    if (dimension == 0) {
        throw ConfigError("problem dimension must be at least 1");
    }
    if (!bounds.empty() && bounds.size() != dimension) {
        throw ConfigError("bounds must list one [lo, hi] pair per dimension");
    }
    for (std::size_t i = 0; i < dimension; ++i) {
        if (!(bound(i).lo < bound(i).hi) || !std::isfinite(bound(i).lo) || !std::isfinite(bound(i).hi)) {
            throw ConfigError("bounds require lo < hi in dimension " + std::to_string(i));
        }
    }
    if (!(drift.severity >= 0.0) || !std::isfinite(drift.severity)) {
        throw ConfigError("drift severity must be a finite nonnegative number");
    }
    if (drift.env_count == 0) {
        throw ConfigError("env_count must be positive");
    }
    if (drift.recurrence_period == 0) {
        throw ConfigError("recurrence_period must be positive");
    }
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
        throw ConfigError("noise_std must be a finite nonnegative number");
    }
    const double h = min_half_width(*this);
    switch (drift.kind) {
        case DriftKind::kSudden:
        case DriftKind::kRecurrent:
        case DriftKind::kMixed:
            if (drift.severity > h) {
                throw ConfigError("severity " + std::to_string(drift.severity) +
                                  " would move the optimum outside the search box (max " + std::to_string(h) +
                                  ")");
            }
            break;
        case DriftKind::kIncremental:
            if (drift.severity / static_cast<double>(drift.env_count) > 1.6 * h) {
                throw ConfigError("incremental severity per environment exceeds the search box");
            }
            break;
    }
}

ProblemState instantiate(const ProblemSpec& spec) {
    spec.validate();
    ProblemState state{spec, {}};
    EnvironmentBuilder builder(state.spec);
    const DriftConfig& drift = spec.drift;
    auto& envs = state.environments;
    envs.reserve(drift.env_count);
    switch (drift.kind) {
        case DriftKind::kSudden:
            for (std::size_t k = 0; k < drift.env_count; ++k) {
                envs.push_back(builder.jump(k));
            }
            break;
        case DriftKind::kIncremental: {
            const double step = drift.severity / static_cast<double>(drift.env_count);
            envs.push_back(builder.start_point(0));
            builder.new_direction();
            for (std::size_t k = 1; k < drift.env_count; ++k) {
                envs.push_back(builder.step(envs.back(), k, step));
            }
            break;
        }
        case DriftKind::kRecurrent: {
            std::vector<Environment> pool;
            for (std::size_t k = 0; k < std::min(drift.recurrence_period, drift.env_count); ++k) {
                pool.push_back(builder.jump(k));
            }
            for (std::size_t k = 0; k < drift.env_count; ++k) {
                Environment env = pool[k % pool.size()];
                env.index = k;
                envs.push_back(std::move(env));
            }
            break;
        }
        case DriftKind::kMixed: {
            const double step = drift.severity / static_cast<double>(kMixedSegmentLength);
            for (std::size_t k = 0; k < drift.env_count; ++k) {
                const std::size_t block = k / kMixedSegmentLength;
                const bool incremental_block = (block % 2) == 1;
                if (!incremental_block || envs.empty()) {
                    envs.push_back(builder.jump(k));
                } else {
                    if (k % kMixedSegmentLength == 0) {
                        builder.new_direction();
                    }
                    envs.push_back(builder.step(envs.back(), k, step));
                }
            }
            break;
        }
    }
    return state;
}

double objective(const ProblemState& state, const Environment& env, std::span<const double> x) {
    const std::size_t d = state.spec.dimension;
    if (x.size() != d) {
        throw DimensionError("objective: x has " + std::to_string(x.size()) + " entries, expected " +
                             std::to_string(d));
    }
    thread_local std::vector<double> z;
    z.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
        z[i] = x[i] - env.shift[i];
    }
    return env.scale * base_value(state.spec.base, z) + env.height_offset;
}

std::pair<std::vector<double>, double> true_optimum(const ProblemState&, const Environment& env) {
    return {env.shift, env.height_offset};
}

std::vector<StreamRecord> sample_stream(const ProblemState& state, std::span<const std::size_t> per_env_counts,
                                        Rng& rng) {
    if (per_env_counts.empty()) {
        throw ConfigError("sample_stream needs at least one per-environment count");
    }
    for (std::size_t c : per_env_counts) {
        if (c == 0) {
            throw ConfigError("per-environment sample counts must be positive");
        }
    }
    const ProblemSpec& spec = state.spec;
    std::uniform_int_distribution<std::size_t> pick(0, per_env_counts.size() - 1);
    std::normal_distribution<double> noise(0.0, spec.noise_std > 0.0 ? spec.noise_std : 1.0);
    std::vector<StreamRecord> out;
    std::size_t t = 0;
    for (const Environment& env : state.environments) {
        const std::size_t count = per_env_counts[pick(rng)];
        for (std::size_t s = 0; s < count; ++s) {
            StreamRecord rec;
            rec.t = t;
            rec.env_id = static_cast<int>(env.index);
            rec.x.resize(spec.dimension);
            for (std::size_t i = 0; i < spec.dimension; ++i) {
                rec.x[i] = uniform(rng, spec.bound(i).lo, spec.bound(i).hi);
            }
            rec.y = objective(state, env, rec.x);
            if (spec.noise_std > 0.0) {
                rec.y += noise(rng);
            }
            rec.new_env = (s == 0 && t != 0);
            out.push_back(std::move(rec));
            ++t;
        }
    }
    return out;
}

std::vector<std::size_t> drift_points(std::span<const StreamRecord> records) {
    std::vector<std::size_t> out;
    for (const StreamRecord& r : records) {
        if (r.new_env) {
            out.push_back(r.t);
        }
    }
    return out;
}

void to_json(json& j, const ProblemSpec& spec) {
    json bounds = json::array();
    for (std::size_t i = 0; i < spec.dimension; ++i) {
        bounds.push_back({spec.bound(i).lo, spec.bound(i).hi});
    }
    j = json{{"base_fn", std::string(to_string(spec.base))},
             {"dimension", spec.dimension},
             {"bounds", bounds},
             {"noise_std", spec.noise_std},
             {"drift",
              {{"kind", std::string(to_string(spec.drift.kind))},
               {"severity", spec.drift.severity},
               {"env_count", spec.drift.env_count},
               {"recurrence_period", spec.drift.recurrence_period},
               {"seed", spec.drift.seed}}}};
}

void from_json(const json& j, ProblemSpec& spec) {
    try {
        spec = ProblemSpec{};
        spec.base = parse_base_function(j.value("base_fn", std::string("sphere")));
        spec.dimension = j.value("dimension", std::size_t{2});
        spec.noise_std = j.value("noise_std", 0.0);
        spec.bounds.clear();
        if (j.contains("bounds")) {
            for (const auto& b : j.at("bounds")) {
                spec.bounds.push_back(Bounds{b.at(0).get<double>(), b.at(1).get<double>()});
            }
        }
        if (j.contains("drift")) {
            const json& d = j.at("drift");
            spec.drift.kind = parse_drift_kind(d.value("kind", std::string("sudden")));
            spec.drift.severity = d.value("severity", spec.drift.severity);
            spec.drift.env_count = d.value("env_count", spec.drift.env_count);
            spec.drift.recurrence_period = d.value("recurrence_period", spec.drift.recurrence_period);
            spec.drift.seed = d.value("seed", spec.drift.seed);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid problem spec: ") + e.what());
    }
}

void save_stream(const std::filesystem::path& path, std::span<const StreamRecord> records, const ProblemSpec* spec) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot open stream file for writing: " + path.string());
    }
    if (spec != nullptr) {
        json header{{"driftlab_stream", 1}, {"spec", *spec}};
        out << header.dump() << '\n';
    }
    for (const StreamRecord& r : records) {
        json line{{"t", r.t}, {"env", r.env_id}, {"x", r.x}, {"y", r.y}, {"new_env", r.new_env}};
        out << line.dump() << '\n';
    }
    if (!out) {
        throw DataError("failed writing stream file: " + path.string());
    }
}

StreamFile load_stream(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open stream file: " + path.string());
    }
    StreamFile file;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const bool terminated = !in.eof();
        try {
            if (!terminated) {
                throw DataError("missing line terminator (truncated record)");
            }
            const json j = json::parse(line);
            if (j.contains("driftlab_stream")) {
                if (line_no != 1) {
                    throw DataError("header line must come first");
                }
                if (j.at("driftlab_stream").get<int>() != 1) {
                    throw DataError("unsupported stream format version");
                }
                file.spec = j.at("spec").get<ProblemSpec>();
                continue;
            }
            StreamRecord r;
            r.t = j.at("t").get<std::size_t>();
            r.env_id = j.at("env").get<int>();
            r.x = j.at("x").get<std::vector<double>>();
            r.y = j.at("y").get<double>();
            r.new_env = j.at("new_env").get<bool>();
            if (!file.records.empty() && r.t <= file.records.back().t) {
                throw DataError("record times must strictly increase");
            }
            file.records.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const Error& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return file;
}

}  // namespace driftlab::benchgen

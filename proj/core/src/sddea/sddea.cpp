// SPDX-License-Identifier: Apache-2.0
#include "driftlab/sddea/sddea.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "driftlab/error.hpp"
#include "driftlab/parallel.hpp"

namespace driftlab::sddea {

std::size_t Population::best_index() const {
    if (members.empty()) throw DataError("empty population");
    std::size_t best = 0;
    for (std::size_t i = 1; i < members.size(); ++i) {
        if (members[i].fitness < members[best].fitness) best = i;
    }
    return best;
}

void EAConfig::validate() const {
    if (pop_size < 4) throw ConfigError("ea.pop_size must be at least 4");
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("ea.f must lie in (0, 1]");
    if (!(cr >= 0.0 && cr <= 1.0)) throw ConfigError("ea.cr must lie in [0, 1]");
    if (!(inject_fraction > 0.0 && inject_fraction < 1.0)) throw ConfigError("ea.inject_fraction must lie in (0, 1)");
    if (elites == 0) throw ConfigError("ea.elites must be positive");
    if (archive_capacity == 0) throw ConfigError("ea.archive_capacity must be positive");
}

void LoopConfig::validate() const {
    ea.validate();
    if (batch_size == 0) throw ConfigError("optimizer.batch_size must be positive");
    if (min_fit < 4) throw ConfigError("optimizer.min_fit must be at least 4");
    if (buffer_capacity < min_fit) throw ConfigError("optimizer.buffer_capacity must be >= min_fit");
    if (refit_every == 0) throw ConfigError("optimizer.refit_every must be positive");
}

Population random_population(std::size_t n, const BoxBounds& bounds, Rng& rng) {
    Population pop;
    pop.members.resize(n);
    for (auto& ind : pop.members) {
        ind.x.resize(bounds.size());
        for (std::size_t j = 0; j < bounds.size(); ++j) ind.x[j] = uniform(rng, bounds[j].lo, bounds[j].hi);
    }
    return pop;
}

void evaluate(Population& pop, const FitnessFn& fitness, std::size_t threads) {
    parallel_for(pop.size(), threads, [&](std::size_t i) {
        auto& ind = pop.members[i];
        ind.fitness = fitness(ind.x);
    });
}

Population de_generation(const Population& pop, const FitnessFn& fitness, const BoxBounds& bounds,
                         const EAConfig& cfg, Rng& rng) {
    const std::size_t n = pop.size();
    if (n < 4) throw DataError("DE/rand/1 needs at least 4 individuals");
    const std::size_t d = bounds.size();
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::uniform_int_distribution<std::size_t> pick_dim(0, d - 1);

    Population trials;
    trials.members.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t r1, r2, r3;
        do r1 = pick(rng); while (r1 == i);
        do r2 = pick(rng); while (r2 == i || r2 == r1);
        do r3 = pick(rng); while (r3 == i || r3 == r1 || r3 == r2);
        const auto& x = pop.members[i].x;
        const auto& a = pop.members[r1].x;
        const auto& b = pop.members[r2].x;
        const auto& c = pop.members[r3].x;
        const std::size_t j_rand = pick_dim(rng);
        auto& u = trials.members[i].x;
        u.resize(d);
        for (std::size_t j = 0; j < d; ++j) {
            const bool cross = uniform01(rng) < cfg.cr || j == j_rand;
            const double v = cross ? a[j] + cfg.f * (b[j] - c[j]) : x[j];
            u[j] = std::clamp(v, bounds[j].lo, bounds[j].hi);
        }
    }
    evaluate(trials, fitness, cfg.threads);

    Population next = pop;
    for (std::size_t i = 0; i < n; ++i) {
        if (trials.members[i].fitness <= pop.members[i].fitness) next.members[i] = std::move(trials.members[i]);
    }
    return next;
}

OptimizeResult optimize_environment(const FitnessFn& fitness, Population pop, const BoxBounds& bounds,
                                    const EAConfig& cfg, Rng& rng) {
    for (std::size_t g = 0; g < cfg.generations; ++g) pop = de_generation(pop, fitness, bounds, cfg, rng);
    OptimizeResult out;
    const auto& best = pop.best();
    out.best = best.x;
    out.best_fitness = best.fitness;
    out.population = std::move(pop);
    return out;
}

OptimizeResult optimize_environment(const surrogate::RbfnModel* model, Population pop, const BoxBounds& bounds,
                                    const EAConfig& cfg, Rng& rng) {
    if (model == nullptr || model->centers.empty()) throw DataError("optimize_environment needs a fitted surrogate");
    const FitnessFn f = [model](std::span<const double> x) { return surrogate::predict(*model, x); };
    return optimize_environment(f, std::move(pop), bounds, cfg, rng);
}

Archive::Archive(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("archive capacity must be positive");
}

void Archive::push(ArchiveEntry entry) {
    if (entries_.size() == capacity_) entries_.pop_front();
    entries_.push_back(std::move(entry));
    ++pushed_;
}

std::vector<ArchiveHit> archive_query(const Archive& archive, const tokenizer::FeatureToken& signature,
                                      std::size_t k) {
    const auto& entries = archive.entries();
    if (entries.empty() || k == 0) return {};
    const std::size_t m = entries.size();
    std::array<double, tokenizer::kFeatureCount> mean{}, scale{};
    for (const auto& e : entries) {
        const auto v = e.signature.to_array();
        for (std::size_t j = 0; j < v.size(); ++j) mean[j] += v[j];
    }
    for (auto& v : mean) v /= static_cast<double>(m);
    for (const auto& e : entries) {
        const auto v = e.signature.to_array();
        for (std::size_t j = 0; j < v.size(); ++j) scale[j] += (v[j] - mean[j]) * (v[j] - mean[j]);
    }
    for (auto& s : scale) {
        s = std::sqrt(s / static_cast<double>(m));
        if (!(s > 0.0)) s = 1.0;  // constant feature: leave unscaled
    }

    const auto q = signature.to_array();
    std::vector<ArchiveHit> hits(m);
    for (std::size_t i = 0; i < m; ++i) {
        const auto v = entries[i].signature.to_array();
        double ss = 0.0;
        for (std::size_t j = 0; j < v.size(); ++j) {
            const double z = (q[j] - v[j]) / scale[j];
            ss += z * z;
        }
        hits[i] = {i, std::sqrt(ss), std::nullopt};
    }
    std::sort(hits.begin(), hits.end(), [](const ArchiveHit& a, const ArchiveHit& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        return a.index > b.index;
    });
    hits.resize(std::min(k, m));
    return hits;
}

std::vector<ArchiveHit> rerank_by_surrogate(const Archive& archive, std::span<const ArchiveHit> candidates,
                                            std::span<const std::vector<double>> xs, std::span<const double> ys) {
    if (xs.size() != ys.size() || xs.empty()) throw DataError("rerank needs matching nonempty samples");
    std::vector<ArchiveHit> out(candidates.begin(), candidates.end());
    std::vector<double> errs(xs.size());
    for (auto& h : out) {
        const auto& model = archive.entries().at(h.index).surrogate;
        if (model.centers.empty() || model.dimension() != xs.front().size()) {
            h.surrogate_error = std::numeric_limits<double>::infinity();
            continue;
        }
        for (std::size_t i = 0; i < xs.size(); ++i) {
            errs[i] = surrogate::prediction_error(ys[i], surrogate::predict(model, xs[i]));
        }
        const auto mid = errs.begin() + static_cast<std::ptrdiff_t>(errs.size() / 2);
        std::nth_element(errs.begin(), mid, errs.end());
        h.surrogate_error = *mid;
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const ArchiveHit& a, const ArchiveHit& b) { return *a.surrogate_error < *b.surrogate_error; });
    return out;
}

std::size_t injected_count(const EAConfig& cfg) noexcept {
    const auto c = static_cast<std::size_t>(std::ceil(cfg.inject_fraction * static_cast<double>(cfg.pop_size)));
    return std::min(c, cfg.pop_size);
}

Population transfer(const Archive& archive, std::span<const ArchiveHit> hits, const BoxBounds& bounds,
                    const EAConfig& cfg, Rng& rng) {
    std::vector<std::vector<double>> injected;
    std::size_t total_elites = 0;
    for (const auto& h : hits) total_elites += archive.entries().at(h.index).elites.size();
    if (total_elites > 0) {
        const std::size_t want = injected_count(cfg);
        for (std::size_t round = 0; injected.size() < want; ++round) {
            for (const auto& h : hits) {
                const auto& elites = archive.entries()[h.index].elites;
                if (elites.empty()) continue;
                injected.push_back(elites[round % elites.size()].x);
                if (injected.size() == want) break;
            }
        }
        // Repeated elites get a small Gaussian kick so the population keeps diversity.
        for (std::size_t i = 1; i < injected.size(); ++i) {
            const bool dup = std::find(injected.begin(), injected.begin() + static_cast<std::ptrdiff_t>(i),
                                       injected[i]) != injected.begin() + static_cast<std::ptrdiff_t>(i);
            if (!dup) continue;
            for (std::size_t j = 0; j < bounds.size(); ++j) {
                const double sigma = 0.01 * (bounds[j].hi - bounds[j].lo);
                injected[i][j] = std::clamp(injected[i][j] + std::normal_distribution<double>(0.0, sigma)(rng),
                                            bounds[j].lo, bounds[j].hi);
            }
        }
    }
    Population pop = random_population(cfg.pop_size - injected.size(), bounds, rng);
    std::vector<Individual> members;
    members.reserve(cfg.pop_size);
    for (auto& x : injected) members.push_back({std::move(x), 0.0});
    for (auto& m : pop.members) members.push_back(std::move(m));
    pop.members = std::move(members);
    return pop;
}

tokenizer::FeatureToken environment_signature(std::span<const double> ys) { return tokenizer::window_features(ys); }

namespace {

surrogate::RbfnModel fit_buffer(const std::deque<const benchgen::StreamRecord*>& buffer, const LoopConfig& cfg,
                                std::size_t fit_index) {
    std::vector<std::vector<double>> xs;
    std::vector<double> ys;
    xs.reserve(buffer.size());
    ys.reserve(buffer.size());
    for (const auto* r : buffer) {
        xs.push_back(r->x);
        ys.push_back(r->y);
    }
    surrogate::FitOptions opt;
    opt.ridge = cfg.ridge;
    opt.seed = derive_seed(cfg.seed, {3, fit_index});
    return surrogate::fit_rbfn(xs, ys, opt).first;
}

}  // namespace

Trajectory run_trace_ea(std::span<const benchgen::StreamRecord> stream, detectors::StreamDetector& detector,
                        const BoxBounds& bounds, const LoopConfig& cfg, const benchgen::ProblemState* truth) {
    cfg.validate();
    if (bounds.empty()) throw ConfigError("optimizer needs a nonempty search box");
    Rng rng(derive_seed(cfg.seed, {0x5dde}));
    const EAConfig& ea = cfg.ea;

    Archive archive(ea.archive_capacity);
    std::deque<const benchgen::StreamRecord*> buffer;
    std::optional<surrogate::RbfnModel> model;
    std::size_t fits = 0;
    std::size_t since_fit = 0;
    bool awaiting_transfer = false;
    Population pop = random_population(ea.pop_size, bounds, rng);

    FitnessFn fitness;
    const auto refit = [&] {
        model = fit_buffer(buffer, cfg, fits++);
        const surrogate::RbfnModel* m = &*model;
        fitness = [m](std::span<const double> x) { return surrogate::predict(*m, x); };
        evaluate(pop, fitness, ea.threads);
        since_fit = 0;
    };

    Trajectory out;
    for (std::size_t start = 0, b = 0; start < stream.size(); start += cfg.batch_size, ++b) {
        const auto batch = stream.subspan(start, std::min(cfg.batch_size, stream.size() - start));
        for (const auto& r : batch) {
            buffer.push_back(&r);
            if (buffer.size() > cfg.buffer_capacity) buffer.pop_front();
        }

        TrajectoryRecord rec;
        rec.batch = b;
        rec.t = batch.back().t;
        rec.env_id = batch.back().env_id;

        const detectors::DriftSignal sig = detector.observe_batch(batch);
        if (sig.drift()) {
            rec.drift_event = true;
            const std::size_t onset = sig.position_hint.value_or(batch.front().t);
            if (model) {
                std::vector<double> ys;
                int env = batch.front().env_id;
                for (const auto* r : buffer) {
                    if (r->t >= onset) break;
                    ys.push_back(r->y);
                    env = r->env_id;
                }
                if (!ys.empty()) {
                    ArchiveEntry entry;
                    entry.signature = environment_signature(ys);
                    std::vector<Individual> sorted = pop.members;
                    std::stable_sort(sorted.begin(), sorted.end(),
                                     [](const Individual& a, const Individual& c) { return a.fitness < c.fitness; });
                    sorted.resize(std::min(ea.elites, sorted.size()));
                    entry.elites = std::move(sorted);
                    entry.surrogate = *model;
                    entry.env_id = env;
                    archive.push(std::move(entry));
                }
            }
            while (!buffer.empty() && buffer.front()->t < onset) buffer.pop_front();
            model.reset();
            awaiting_transfer = true;
            ++out.lineages;
        }

        if (!model) {
            if (buffer.size() >= cfg.min_fit) {
                if (awaiting_transfer) {
                    std::vector<std::vector<double>> xs;
                    std::vector<double> ys;
                    for (const auto* r : buffer) {
                        xs.push_back(r->x);
                        ys.push_back(r->y);
                    }
                    const auto candidates = archive_query(archive, environment_signature(ys),
                                                          std::max(cfg.archive_candidates, cfg.archive_hits));
                    auto hits = candidates.empty() ? candidates : rerank_by_surrogate(archive, candidates, xs, ys);
                    if (hits.size() > cfg.archive_hits) hits.resize(cfg.archive_hits);
                    if (!hits.empty()) rec.transfer_from = archive.entries()[hits.front().index].env_id;
                    pop = transfer(archive, hits, bounds, ea, rng);
                    awaiting_transfer = false;
                }
                refit();
            }
        } else if (++since_fit >= cfg.refit_every) {
            refit();
        }

        if (model) {
            auto res = optimize_environment(fitness, std::move(pop), bounds, ea, rng);
            pop = std::move(res.population);
            rec.surrogate_fitness = res.best_fitness;
        }
        rec.detected_env = out.lineages - 1;
        rec.incumbent = pop.best().x;
        if (truth) {
            const auto& env = truth->environments.at(static_cast<std::size_t>(rec.env_id));
            rec.true_fitness = benchgen::objective(*truth, env, rec.incumbent);
            rec.optimum = benchgen::true_optimum(*truth, env).second;
        }
        out.records.push_back(std::move(rec));
    }
    out.archive_size = archive.size();
    return out;
}

double compute_edt(std::span<const double> incumbent_values, std::span<const double> optima) {
    if (incumbent_values.size() != optima.size()) throw DataError("E_DT needs one optimum per batch");
    if (incumbent_values.empty()) throw DataError("E_DT of an empty trajectory");
    double s = 0.0;
    for (std::size_t i = 0; i < optima.size(); ++i) s += std::max(0.0, incumbent_values[i] - optima[i]);
    return s / static_cast<double>(optima.size());
}

double compute_edt(const Trajectory& trajectory) {
    std::vector<double> f, opt;
    for (const auto& r : trajectory.records) {
        if (!r.true_fitness || !r.optimum) throw DataError("trajectory lacks true objective values");
        f.push_back(*r.true_fitness);
        opt.push_back(*r.optimum);
    }
    return compute_edt(f, opt);
}

namespace {

template <class T>
nlohmann::json opt_json(const std::optional<T>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <class T>
std::optional<T> opt_from(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<T>();
}

}  // namespace

void save_trajectory(const std::filesystem::path& path, const Trajectory& trajectory) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open trajectory file for writing: " + path.string());
    out << nlohmann::json{{"trajectory", 1}, {"archive_size", trajectory.archive_size},
                          {"lineages", trajectory.lineages}}
               .dump()
        << '\n';
    for (const auto& r : trajectory.records) {
        nlohmann::json j{{"batch", r.batch},     {"t", r.t},
                         {"env_id", r.env_id},   {"detected_env", r.detected_env},
                         {"incumbent", r.incumbent}, {"drift_event", r.drift_event}};
        j["surrogate_fitness"] = opt_json(r.surrogate_fitness);
        j["true_fitness"] = opt_json(r.true_fitness);
        j["optimum"] = opt_json(r.optimum);
        j["transfer_from"] = opt_json(r.transfer_from);
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("failed writing trajectory file: " + path.string());
}

Trajectory load_trajectory(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open trajectory file: " + path.string());
    Trajectory out;
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
        ++no;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            if (j.contains("trajectory")) {
                out.archive_size = j.at("archive_size").get<std::size_t>();
                out.lineages = j.at("lineages").get<std::size_t>();
                continue;
            }
            TrajectoryRecord r;
            r.batch = j.at("batch").get<std::size_t>();
            r.t = j.at("t").get<std::size_t>();
            r.env_id = j.at("env_id").get<int>();
            r.detected_env = j.at("detected_env").get<std::size_t>();
            r.incumbent = j.at("incumbent").get<std::vector<double>>();
            r.drift_event = j.at("drift_event").get<bool>();
            r.surrogate_fitness = opt_from<double>(j, "surrogate_fitness");
            r.true_fitness = opt_from<double>(j, "true_fitness");
            r.optimum = opt_from<double>(j, "optimum");
            r.transfer_from = opt_from<int>(j, "transfer_from");
            out.records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace driftlab::sddea

// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <memory>
#include <set>

#include "driftlab/detectors/detectors.hpp"
#include "driftlab/error.hpp"
#include "driftlab/harness/harness.hpp"
#include "driftlab/parallel.hpp"
#include "driftlab/version.hpp"

namespace driftlab::harness {

using nlohmann::json;

namespace {

const std::set<std::string> kDetectorNames{"ddm", "hddm_a", "adwin", "kswin", "trace", "oracle", "none"};
const std::set<std::string> kArmNames{"trace", "no-adapt", "oracle", "ddm", "hddm_a", "adwin", "kswin"};

void reject_unknown(const json& j, const std::string& section, std::initializer_list<const char*> allowed,
                    std::vector<std::string>& errors, std::initializer_list<const char*> extra = {}) {
    if (!j.is_object()) {
        errors.push_back(section + ": expected an object");
        return;
    }
    for (const auto& [key, value] : j.items()) {
        const auto is_key = [&](const char* a) { return key == a; };
        if (std::none_of(allowed.begin(), allowed.end(), is_key) && std::none_of(extra.begin(), extra.end(), is_key)) {
            errors.push_back(section + "." + key + ": unknown key");
        }
    }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& section, std::vector<std::string>& errors) {
    if (!j.is_object() || !j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        errors.push_back(section + "." + key + ": wrong type");
    }
}

void fail_if(std::vector<std::string>& errors) {
    if (errors.empty()) return;
    std::string msg = "invalid experiment config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
}

const std::initializer_list<const char*> kLoopKeys = {
    "pop_size",        "f",           "cr",      "generations",        "elites",       "inject_fraction",
    "archive_capacity", "batch_size", "buffer_capacity", "refit_every", "min_fit", "archive_candidates",
    "archive_hits",    "ridge"};

void read_loop(const json& o, sddea::LoopConfig& loop, std::vector<std::string>& errors) {
    read(o, "pop_size", loop.ea.pop_size, "optimizer", errors);
    read(o, "f", loop.ea.f, "optimizer", errors);
    read(o, "cr", loop.ea.cr, "optimizer", errors);
    read(o, "generations", loop.ea.generations, "optimizer", errors);
    read(o, "elites", loop.ea.elites, "optimizer", errors);
    read(o, "inject_fraction", loop.ea.inject_fraction, "optimizer", errors);
    read(o, "archive_capacity", loop.ea.archive_capacity, "optimizer", errors);
    read(o, "batch_size", loop.batch_size, "optimizer", errors);
    read(o, "buffer_capacity", loop.buffer_capacity, "optimizer", errors);
    read(o, "refit_every", loop.refit_every, "optimizer", errors);
    read(o, "min_fit", loop.min_fit, "optimizer", errors);
    read(o, "archive_candidates", loop.archive_candidates, "optimizer", errors);
    read(o, "archive_hits", loop.archive_hits, "optimizer", errors);
    read(o, "ridge", loop.ridge, "optimizer", errors);
}

}  // namespace

sddea::LoopConfig parse_loop_config(const json& j) {
    sddea::LoopConfig loop;
    std::vector<std::string> errors;
    reject_unknown(j, "optimizer", kLoopKeys, errors);
    read_loop(j, loop, errors);
    fail_if(errors);
    try {
        loop.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("optimizer: ") + e.what());
    }
    return loop;
}

void ExperimentConfig::validate() const {
    std::vector<std::string> errors;
    if (seeds.empty()) errors.push_back("seeds: at least one seed is required");
    if (instances.empty() && !stream_file) errors.push_back("stream: needs instances or a file");
    for (const auto& inst : instances) {
        try {
            inst.spec.validate();
        } catch (const ConfigError& e) {
            errors.push_back("stream.instances[" + inst.name + "]: " + e.what());
        }
    }
    if (samples.empty() || std::find(samples.begin(), samples.end(), std::size_t{0}) != samples.end()) {
        errors.push_back("stream.samples: needs positive counts");
    }
    if (detectors.empty() && arms.empty()) errors.push_back("detectors.list/optimizer.arms: nothing to run");
    for (const auto& d : detectors) {
        if (!kDetectorNames.count(d)) errors.push_back("detectors.list: unknown detector '" + d + "'");
    }
    for (const auto& a : arms) {
        if (!kArmNames.count(a)) errors.push_back("optimizer.arms: unknown arm '" + a + "'");
    }
    const bool wants_trace = std::count(detectors.begin(), detectors.end(), "trace") > 0 ||
                             std::count(arms.begin(), arms.end(), "trace") > 0;
    if (wants_trace && !checkpoint) errors.push_back("detectors.checkpoint: required by the trace detector");
    if (delta == 0) errors.push_back("metrics.delta: must be positive");
    if (calibration == 0) errors.push_back("detectors.calibration: must be positive");
    if (fit_samples < 4) errors.push_back("detectors.fit_samples: must be at least 4");
    try {
        windows.validate();
    } catch (const ConfigError& e) {
        errors.push_back(std::string("detectors.windows: ") + e.what());
    }
    if (!arms.empty()) {
        try {
            loop.validate();
        } catch (const ConfigError& e) {
            errors.push_back(std::string("optimizer: ") + e.what());
        }
    }
    fail_if(errors);
}

ExperimentConfig parse_experiment_config(const json& j) {
    ExperimentConfig cfg;
    std::vector<std::string> errors;
    reject_unknown(j, "config", {"seeds", "seed_count", "base_seed", "threads", "stream", "detectors", "optimizer",
                                 "metrics", "output"},
                   errors);
    fail_if(errors);

    if (j.contains("seeds")) {
        read(j, "seeds", cfg.seeds, "config", errors);
    } else {
        std::size_t count = 11;
        std::uint64_t base = 1;
        read(j, "seed_count", count, "config", errors);
        read(j, "base_seed", base, "config", errors);
        for (std::size_t i = 0; i < count; ++i) cfg.seeds.push_back(base + i);
    }
    read(j, "threads", cfg.threads, "config", errors);

    if (j.contains("stream")) {
        const json& s = j.at("stream");
        reject_unknown(s, "stream", {"instances", "samples", "file"}, errors);
        read(s, "samples", cfg.samples, "stream", errors);
        if (s.is_object() && s.contains("file")) cfg.stream_file = s.at("file").get<std::string>();
        if (s.is_object() && s.contains("instances")) {
            std::size_t idx = 0;
            for (const auto& inst : s.at("instances")) {
                const std::string where = "stream.instances[" + std::to_string(idx) + "]";
                reject_unknown(inst, where, {"name", "base_fn", "dimension", "bounds", "noise_std", "drift"}, errors);
                InstanceConfig ic;
                ic.name = inst.value("name", "instance" + std::to_string(idx));
                try {
                    benchgen::from_json(inst, ic.spec);
                } catch (const ConfigError& e) {
                    errors.push_back(where + ": " + e.what());
                }
                cfg.instances.push_back(std::move(ic));
                ++idx;
            }
        }
    }
    if (j.contains("detectors")) {
        const json& d = j.at("detectors");
        reject_unknown(d, "detectors",
                       {"list", "checkpoint", "calibration", "fit_samples", "window", "stride", "max_len"}, errors);
        read(d, "list", cfg.detectors, "detectors", errors);
        if (d.is_object() && d.contains("checkpoint")) cfg.checkpoint = d.at("checkpoint").get<std::string>();
        read(d, "calibration", cfg.calibration, "detectors", errors);
        read(d, "fit_samples", cfg.fit_samples, "detectors", errors);
        read(d, "window", cfg.windows.window, "detectors", errors);
        read(d, "stride", cfg.windows.stride, "detectors", errors);
        read(d, "max_len", cfg.windows.max_len, "detectors", errors);
    }
    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        reject_unknown(o, "optimizer", kLoopKeys, errors, {"arms"});
        read(o, "arms", cfg.arms, "optimizer", errors);
        read_loop(o, cfg.loop, errors);
    }
    if (j.contains("metrics")) {
        const json& m = j.at("metrics");
        reject_unknown(m, "metrics", {"delta"}, errors);
        read(m, "delta", cfg.delta, "metrics", errors);
    }
    if (j.contains("output")) {
        const json& o = j.at("output");
        reject_unknown(o, "output", {"dir", "plots", "introspection_sequences"}, errors);
        if (o.is_object() && o.contains("dir")) cfg.out_dir = o.at("dir").get<std::string>();
        read(o, "plots", cfg.plots, "output", errors);
        read(o, "introspection_sequences", cfg.introspection_sequences, "output", errors);
    }
    fail_if(errors);
    cfg.validate();
    return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    json j;
    try {
        j = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    auto cfg = parse_experiment_config(j);
    // Relative paths in the config resolve against the config's directory.
    const auto base = path.parent_path();
    if (cfg.checkpoint && cfg.checkpoint->is_relative()) cfg.checkpoint = base / *cfg.checkpoint;
    if (cfg.stream_file && cfg.stream_file->is_relative()) cfg.stream_file = base / *cfg.stream_file;
    return cfg;
}

json to_json(const ExperimentConfig& cfg) {
    json instances = json::array();
    for (const auto& inst : cfg.instances) {
        json s;
        benchgen::to_json(s, inst.spec);
        s["name"] = inst.name;
        instances.push_back(std::move(s));
    }
    json stream{{"instances", instances}, {"samples", cfg.samples}};
    if (cfg.stream_file) stream["file"] = cfg.stream_file->generic_string();
    json detectors{{"list", cfg.detectors},          {"calibration", cfg.calibration},
                   {"fit_samples", cfg.fit_samples}, {"window", cfg.windows.window},
                   {"stride", cfg.windows.stride},   {"max_len", cfg.windows.max_len}};
    if (cfg.checkpoint) detectors["checkpoint"] = cfg.checkpoint->generic_string();
    const auto& l = cfg.loop;
    json optimizer{{"arms", cfg.arms},
                   {"pop_size", l.ea.pop_size},
                   {"f", l.ea.f},
                   {"cr", l.ea.cr},
                   {"generations", l.ea.generations},
                   {"elites", l.ea.elites},
                   {"inject_fraction", l.ea.inject_fraction},
                   {"archive_capacity", l.ea.archive_capacity},
                   {"batch_size", l.batch_size},
                   {"buffer_capacity", l.buffer_capacity},
                   {"refit_every", l.refit_every},
                   {"min_fit", l.min_fit},
                   {"archive_candidates", l.archive_candidates},
                   {"archive_hits", l.archive_hits},
                   {"ridge", l.ridge}};
    return json{{"seeds", cfg.seeds},
                {"threads", cfg.threads},
                {"stream", stream},
                {"detectors", detectors},
                {"optimizer", optimizer},
                {"metrics", {{"delta", cfg.delta}}},
                {"output",
                 {{"dir", cfg.out_dir.generic_string()},
                  {"plots", cfg.plots},
                  {"introspection_sequences", cfg.introspection_sequences}}}};
}

namespace {

struct Prepared {
    std::string name;
    std::optional<benchgen::ProblemState> state;
    std::vector<benchgen::StreamRecord> stream;
};

Prepared prepare_instance(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t i) {
    Prepared p;
    if (cfg.stream_file) {
        auto file = benchgen::load_stream(*cfg.stream_file);
        p.name = cfg.stream_file->stem().string();
        if (file.spec) p.state = benchgen::instantiate(*file.spec);
        p.stream = std::move(file.records);
        return p;
    }
    const auto& inst = cfg.instances[i];
    p.name = inst.name;
    benchgen::ProblemSpec spec = inst.spec;
    spec.drift.seed = derive_seed(seed, {i, 0});
    p.state = benchgen::instantiate(spec);
    Rng rng(derive_seed(seed, {i, 1}));
    p.stream = benchgen::sample_stream(*p.state, cfg.samples, rng);
    return p;
}

detectors::DetectorSpec detector_spec(const ExperimentConfig& cfg, const std::string& kind, std::uint64_t seed,
                                      std::size_t i, std::shared_ptr<const model::Checkpoint> ckpt) {
    detectors::DetectorSpec spec;
    spec.kind = kind;
    spec.pipeline.calibration = cfg.calibration;
    spec.pipeline.surrogate.fit_samples = cfg.fit_samples;
    spec.pipeline.surrogate.seed = derive_seed(seed, {i, 2});
    spec.trace.windows = cfg.windows;
    spec.trace.surrogate = spec.pipeline.surrogate;
    spec.checkpoint = std::move(ckpt);
    spec.seed = derive_seed(seed, {i, 3});
    return spec;
}

std::filesystem::path log_path(const ExperimentConfig& cfg, const std::string& instance, std::uint64_t seed,
                               const std::string& method, const char* what) {
    return *cfg.log_dir / (instance + "_seed" + std::to_string(seed) + "_" + method + "_" + what + ".jsonl");
}

struct SeedResult {
    std::vector<ResultRow> rows;
    std::vector<std::pair<std::string, std::uint64_t>> hashes;
    std::vector<Series> convergence;
};

SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed, bool keep_series,
                    const std::shared_ptr<const model::Checkpoint>& ckpt) {
    SeedResult out;
    const std::size_t count = cfg.stream_file ? 1 : cfg.instances.size();
    for (std::size_t i = 0; i < count; ++i) {
        const Prepared p = prepare_instance(cfg, seed, i);
        out.hashes.emplace_back(p.name, stream_hash(p.stream));
        const auto truths = benchgen::drift_points(p.stream);

        for (const auto& kind : cfg.detectors) {
            auto det = detectors::make_detector(detector_spec(cfg, kind, seed, i, ckpt));
            const auto events = detectors::run_detector(*det, p.stream);
            if (cfg.log_dir) detectors::save_detection_log(log_path(cfg, p.name, seed, kind, "detections"), events);
            const auto times = detectors::detection_times(events);
            const auto m = detection_metrics(truths, times, cfg.delta);
            ResultRow row{seed, p.name, "detect", kind, {}};
            row.values = {{"precision", m.precision},
                          {"recall", m.recall},
                          {"f1", m.f1},
                          {"tp", static_cast<double>(m.tp)},
                          {"fp", static_cast<double>(m.fp)},
                          {"fn", static_cast<double>(m.fn)}};
            if (m.mean_delay) row.values["mean_delay"] = *m.mean_delay;
            out.rows.push_back(std::move(row));
        }

        if (!cfg.arms.empty()) {
            if (!p.state) throw DataError("optimizer arms need a stream with a problem spec header");
            sddea::BoxBounds bounds;
            for (std::size_t d = 0; d < p.state->spec.dimension; ++d) bounds.push_back(p.state->spec.bound(d));
            for (const auto& arm : cfg.arms) {
                const std::string kind = arm == "no-adapt" ? "none" : arm;
                auto det = detectors::make_detector(detector_spec(cfg, kind, seed, i, ckpt));
                sddea::LoopConfig loop = cfg.loop;
                loop.seed = derive_seed(seed, {i, 4});
                const auto traj = sddea::run_trace_ea(p.stream, *det, bounds, loop, &*p.state);
                if (cfg.log_dir) sddea::save_trajectory(log_path(cfg, p.name, seed, arm, "trajectory"), traj);
                ResultRow row{seed, p.name, "optimize", arm, {}};
                row.values = {{"edt", sddea::compute_edt(traj)},
                              {"lineages", static_cast<double>(traj.lineages)},
                              {"archive_size", static_cast<double>(traj.archive_size)}};
                out.rows.push_back(std::move(row));
                if (keep_series && i == 0) {
                    Series s{arm, {}};
                    for (const auto& r : traj.records) s.values.push_back(*r.true_fitness - *r.optimum);
                    out.convergence.push_back(std::move(s));
                }
            }
        }
    }
    return out;
}

std::string role_name(model::TokenRole r) {
    switch (r) {
        case model::TokenRole::kContext: return "context";
        case model::TokenRole::kPreDrift: return "pre-drift";
        case model::TokenRole::kPostDrift: return "post-drift";
        case model::TokenRole::kPad: return "pad";
    }
    return "unknown";
}

void introspect(const ExperimentConfig& cfg, const model::Checkpoint& ckpt, Report& report) {
    const Prepared p = prepare_instance(cfg, cfg.seeds.front(), 0);
    surrogate::SurrogatePolicy policy;
    policy.fit_samples = cfg.fit_samples;
    policy.seed = derive_seed(cfg.seeds.front(), {0, 5});
    tokenizer::WindowConfig w = cfg.windows;
    w.max_len = ckpt.config.max_len;
    Rng rng(derive_seed(cfg.seeds.front(), {0, 6}));
    const auto segments = tokenizer::error_segments(p.stream, policy);
    const auto all = tokenizer::build_training_set(segments, w, rng);

    // Half drifted, half stable sequences, in dataset order.
    std::vector<const tokenizer::TokenSequence*> pick;
    const std::size_t want = cfg.introspection_sequences;
    for (int drifted = 1; drifted >= 0; --drifted) {
        std::size_t taken = 0;
        for (const auto& s : all) {
            if ((s.label > 0) != (drifted == 1)) continue;
            if (taken * 2 >= want) break;
            pick.push_back(&s);
            ++taken;
        }
    }
    if (pick.empty()) return;

    std::vector<std::vector<double>> rows;
    std::vector<std::string> roles;
    for (std::size_t k = 0; k < pick.size(); ++k) {
        const auto& s = *pick[k];
        report.attention.push_back(
            {"seq" + std::to_string(k), s.label, model::attention_weights(s, ckpt.params, ckpt.config)});
        const auto emb = model::token_embeddings(s, ckpt.params, ckpt.config);
        for (std::size_t r = 0; r < emb.roles.size(); ++r) {
            if (emb.roles[r] == model::TokenRole::kPad) continue;
            const auto row = emb.rows.values().subspan(r * emb.rows.cols(), emb.rows.cols());
            rows.emplace_back(row.begin(), row.end());
            roles.push_back(role_name(emb.roles[r]));
        }
    }
    if (rows.size() >= 3) {
        const auto pca = pca_2d(rows);
        report.pca = PcaFigure{pca.coords, roles, pca.explained_ratio, pca.degenerate};
    }
}

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

Report run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.log_dir) std::filesystem::create_directories(*cfg.log_dir);
    std::shared_ptr<const model::Checkpoint> ckpt;
    if (cfg.checkpoint) ckpt = std::make_shared<const model::Checkpoint>(model::load_checkpoint(*cfg.checkpoint));

    std::vector<SeedResult> results(cfg.seeds.size());
    parallel_for(cfg.seeds.size(), cfg.threads,
                 [&](std::size_t s) { results[s] = run_seed(cfg, cfg.seeds[s], s == 0, ckpt); });

    Report report;
    report.config = to_json(cfg);
    json hashes = json::array();
    for (std::size_t s = 0; s < results.size(); ++s) {
        for (auto& row : results[s].rows) report.rows.push_back(std::move(row));
        for (const auto& [name, h] : results[s].hashes) {
            hashes.push_back({{"seed", cfg.seeds[s]}, {"instance", name}, {"fnv1a64", hex64(h)}});
        }
    }
    report.convergence = std::move(results.front().convergence);
    report.aggregates = compute_aggregates(report.rows);
    report.provenance = {
        {"library_version", std::string(library_version())},
        {"seeds", cfg.seeds},
        {"delta", cfg.delta},
        {"stream_hashes", hashes},
        {"detector_adaptation",
         {{"ddm", "errors binarized at calibration mean + 2 sd"},
          {"hddm_a", "errors min-max scaled on the calibration errors, then clipped to [0, 1]"},
          {"adwin", "raw errors"},
          {"kswin", "raw errors"},
          {"calibration", cfg.calibration},
          {"restart", "surrogate refit and detector reset after every drift"}}}};
    if (ckpt) {
        report.provenance["checkpoint"] = {{"path", cfg.checkpoint->generic_string()},
                                           {"ablation", std::string(model::to_string(ckpt->config.ablation))}};
        if (cfg.plots && !cfg.instances.empty()) introspect(cfg, *ckpt, report);
    }
    report.generated_at = utc_now();
    return report;
}

json report_to_json(const Report& report, bool include_timestamp) {
    json rows = json::array();
    for (const auto& r : report.rows) {
        rows.push_back({{"seed", r.seed}, {"instance", r.instance}, {"kind", r.kind}, {"method", r.method},
                        {"values", r.values}});
    }
    json aggs = json::array();
    for (const auto& a : report.aggregates) {
        aggs.push_back({{"instance", a.instance}, {"kind", a.kind}, {"method", a.method}, {"metric", a.metric},
                        {"n", a.n}, {"median", a.median}, {"q1", a.q1}, {"q3", a.q3}, {"iqr", a.iqr}});
    }
    json conv = json::array();
    for (const auto& s : report.convergence) conv.push_back({{"label", s.label}, {"values", s.values}});
    json att = json::array();
    for (const auto& a : report.attention) {
        att.push_back({{"label", a.label}, {"drift_label", a.drift_label}, {"weights", a.weights}});
    }
    json pca = nullptr;
    if (report.pca) {
        json coords = json::array();
        for (const auto& c : report.pca->coords) coords.push_back({c[0], c[1]});
        pca = {{"coords", coords},
               {"roles", report.pca->roles},
               {"explained_ratio", {report.pca->explained_ratio[0], report.pca->explained_ratio[1]}},
               {"degenerate", report.pca->degenerate}};
    }
    json j{{"config", report.config},
           {"provenance", report.provenance},
           {"rows", rows},
           {"aggregates", aggs},
           {"figures", {{"convergence", conv}, {"attention", att}, {"pca", pca}}}};
    if (include_timestamp) j["generated_at"] = report.generated_at;
    return j;
}

Report report_from_json(const json& j) {
    try {
        Report r;
        r.config = j.value("config", json::object());
        r.provenance = j.value("provenance", json::object());
        r.generated_at = j.value("generated_at", std::string());
        for (const auto& row : j.at("rows")) {
            r.rows.push_back({row.at("seed").get<std::uint64_t>(), row.at("instance").get<std::string>(),
                              row.at("kind").get<std::string>(), row.at("method").get<std::string>(),
                              row.at("values").get<std::map<std::string, double>>()});
        }
        r.aggregates = compute_aggregates(r.rows);
        if (j.contains("figures")) {
            const json& f = j.at("figures");
            for (const auto& s : f.value("convergence", json::array())) {
                r.convergence.push_back({s.at("label").get<std::string>(), s.at("values").get<std::vector<double>>()});
            }
            for (const auto& a : f.value("attention", json::array())) {
                r.attention.push_back({a.at("label").get<std::string>(), a.at("drift_label").get<std::size_t>(),
                                       a.at("weights").get<std::vector<double>>()});
            }
            if (f.contains("pca") && !f.at("pca").is_null()) {
                const json& p = f.at("pca");
                PcaFigure fig;
                for (const auto& c : p.at("coords")) fig.coords.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
                fig.roles = p.at("roles").get<std::vector<std::string>>();
                fig.explained_ratio = {p.at("explained_ratio").at(0).get<double>(),
                                       p.at("explained_ratio").at(1).get<double>()};
                fig.degenerate = p.at("degenerate").get<bool>();
                r.pca = std::move(fig);
            }
        }
        return r;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed report: ") + e.what());
    }
}

}  // namespace driftlab::harness

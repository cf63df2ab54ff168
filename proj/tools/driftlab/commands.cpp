// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "driftlab/benchgen/benchgen.hpp"
#include "driftlab/clusterapp/clusterapp.hpp"
#include "driftlab/detectors/detectors.hpp"
#include "driftlab/error.hpp"
#include "driftlab/harness/harness.hpp"
#include "driftlab/model/model.hpp"
#include "driftlab/parallel.hpp"
#include "driftlab/random.hpp"
#include "driftlab/tokenizer/tokenizer.hpp"
#include "driftlab/version.hpp"

namespace driftlab::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json read_config(const CommandSpec& spec) {
    if (!spec.config) return json::object();
    std::ifstream in(*spec.config);
    if (!in) throw ConfigError("cannot open config file: " + spec.config->string());
    try {
        json j = json::parse(in, nullptr, true, true);
        if (!j.is_object()) throw ConfigError(spec.config->string() + ": top level must be an object");
        return j;
    } catch (const json::parse_error& e) {
        throw ConfigError(spec.config->string() + ": " + e.what());
    }
}

fs::path config_dir(const CommandSpec& spec) { return spec.config ? spec.config->parent_path() : fs::path{}; }

fs::path resolve(const CommandSpec& spec, const fs::path& p) { return p.is_relative() ? config_dir(spec) / p : p; }

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    std::vector<std::string> bad;
    for (const auto& [key, value] : j.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
            bad.push_back(where.empty() ? key : where + "." + key);
        }
    }
    if (bad.empty()) return;
    std::string msg = "unknown config keys:";
    for (const auto& b : bad) msg += " " + b;
    throw ConfigError(msg);
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string(key) + ": wrong type");
    }
}

fs::path out_dir(const CommandSpec& spec, const fs::path& fallback) {
    const fs::path dir = spec.out ? *spec.out : fallback;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw DataError("failed writing " + path.string());
}

// Every run leaves its fully resolved configuration next to its outputs.
void log_resolved(const CommandSpec& spec, const fs::path& dir, const json& resolved, std::ostream& log) {
    json doc{{"command", spec.subcommand},
             {"library_version", std::string(library_version())},
             {"thread_cap", resolve_threads(0)},
             {"config", resolved}};
    if (spec.config) doc["config_file"] = spec.config->generic_string();
    write_text(dir / "resolved_config.json", doc.dump(2) + "\n");
    if (spec.verbose) log << "resolved config:\n" << doc.dump(2) << "\n";
}

std::uint64_t seed_or(const CommandSpec& spec, const json& j) {
    return spec.seed ? *spec.seed : get_or<std::uint64_t>(j, "seed", 1);
}

// ---- gen ---------------------------------------------------------------

json default_gen_config() {
    return json{{"instances",
                 {{{"name", "train"},
                   {"base_fn", "sphere"},
                   {"dimension", 2},
                   {"drift", {{"kind", "mixed"}, {"env_count", 60}, {"severity", 2.0}}}}}},
                {"samples", {600, 750, 900}}};
}

void cmd_gen(const CommandSpec& spec, std::ostream& log) {
    json j = read_config(spec);
    if (j.empty()) j = default_gen_config();
    check_keys(j, "", {"instances", "samples", "seed"});
    const std::uint64_t seed = seed_or(spec, j);
    const auto samples = get_or<std::vector<std::size_t>>(j, "samples", {600, 750, 900});
    if (!j.contains("instances") || !j.at("instances").is_array() || j.at("instances").empty()) {
        throw ConfigError("instances: at least one instance is required");
    }

    std::vector<std::pair<std::string, benchgen::ProblemSpec>> specs;
    std::set<std::string> names;
    for (std::size_t i = 0; i < j.at("instances").size(); ++i) {
        const json& inst = j.at("instances")[i];
        const std::string where = "instances[" + std::to_string(i) + "]";
        if (!inst.is_object()) throw ConfigError(where + ": expected an object");
        check_keys(inst, where, {"name", "base_fn", "dimension", "bounds", "noise_std", "drift"});
        benchgen::ProblemSpec ps;
        try {
            benchgen::from_json(inst, ps);
            ps.validate();
        } catch (const ConfigError& e) {
            throw ConfigError(where + ": " + e.what());
        }
        const std::string name = get_or<std::string>(inst, "name", "instance" + std::to_string(i));
        if (!names.insert(name).second) throw ConfigError(where + ".name: duplicate '" + name + "'");
        specs.emplace_back(name, ps);
    }

    const fs::path dir = out_dir(spec, "streams");
    json resolved{{"seed", seed}, {"samples", samples}, {"instances", json::array()}};
    json provenance = json::array();
    for (std::size_t i = 0; i < specs.size(); ++i) {
        auto& [name, ps] = specs[i];
        // Same derivation as the experiment harness, so a generated file equals the harness stream.
        ps.drift.seed = derive_seed(seed, {i, 0});
        const auto state = benchgen::instantiate(ps);
        Rng rng(derive_seed(seed, {i, 1}));
        const auto stream = benchgen::sample_stream(state, samples, rng);
        const fs::path path = dir / (name + ".jsonl");
        benchgen::save_stream(path, stream, &ps);

        json s;
        benchgen::to_json(s, ps);
        s["name"] = name;
        resolved["instances"].push_back(s);
        provenance.push_back({{"instance", name},
                              {"file", path.filename().generic_string()},
                              {"records", stream.size()},
                              {"environments", state.environments.size()},
                              {"fnv1a64", harness::hex64(harness::stream_hash(stream))}});
        log << "gen: " << path.string() << " (" << stream.size() << " records, " << state.environments.size()
            << " environments)\n";
    }
    write_text(dir / "provenance.json", json{{"seed", seed}, {"streams", provenance}}.dump(2) + "\n");
    log_resolved(spec, dir, resolved, log);
}

// ---- tokenize / train ----------------------------------------------------

struct TokenizeOptions {
    std::vector<fs::path> streams;
    tokenizer::WindowConfig windows;
    std::size_t fit_samples = 120;
};

TokenizeOptions tokenize_options(const CommandSpec& spec, const json& j) {
    TokenizeOptions o;
    for (const auto& s : get_or<std::vector<std::string>>(j, "streams", {})) o.streams.push_back(resolve(spec, s));
    if (o.streams.empty()) throw ConfigError("streams: at least one stream file is required");
    o.windows.window = get_or<std::size_t>(j, "window", o.windows.window);
    o.windows.stride = get_or<std::size_t>(j, "stride", o.windows.stride);
    o.windows.max_len = get_or<std::size_t>(j, "max_len", o.windows.max_len);
    o.fit_samples = get_or<std::size_t>(j, "fit_samples", o.fit_samples);
    o.windows.validate();
    if (o.fit_samples < 4) throw ConfigError("fit_samples: must be at least 4");
    return o;
}

json to_json(const TokenizeOptions& o) {
    json streams = json::array();
    for (const auto& s : o.streams) streams.push_back(s.generic_string());
    return json{{"streams", streams},
                {"window", o.windows.window},
                {"stride", o.windows.stride},
                {"max_len", o.windows.max_len},
                {"fit_samples", o.fit_samples}};
}

std::vector<tokenizer::TokenSequence> tokenize_streams(const TokenizeOptions& o, std::uint64_t seed) {
    std::vector<tokenizer::TokenSequence> all;
    for (std::size_t k = 0; k < o.streams.size(); ++k) {
        const auto file = benchgen::load_stream(o.streams[k]);
        surrogate::SurrogatePolicy policy;
        policy.fit_samples = o.fit_samples;
        policy.seed = derive_seed(seed, {k, 5});
        Rng rng(derive_seed(seed, {k, 6}));
        const auto segments = tokenizer::error_segments(file.records, policy);
        auto seqs = tokenizer::build_training_set(segments, o.windows, rng);
        std::move(seqs.begin(), seqs.end(), std::back_inserter(all));
    }
    return all;
}

json label_histogram(const std::vector<tokenizer::TokenSequence>& data) {
    std::map<std::size_t, std::size_t> h;
    for (const auto& s : data) ++h[s.label];
    json out = json::object();
    for (const auto& [label, count] : h) out[std::to_string(label)] = count;
    return out;
}

void cmd_tokenize(const CommandSpec& spec, std::ostream& log) {
    const json j = read_config(spec);
    check_keys(j, "", {"streams", "window", "stride", "max_len", "fit_samples", "seed"});
    const auto opts = tokenize_options(spec, j);
    const std::uint64_t seed = seed_or(spec, j);
    const fs::path dir = out_dir(spec, "tokens");
    const auto data = tokenize_streams(opts, seed);
    if (data.empty()) throw DataError("streams produced no labeled sequences");
    const fs::path path = dir / "tokens.jsonl";
    tokenizer::save_token_dataset(path, data);
    log << "tokenize: " << data.size() << " sequences -> " << path.string() << "\n";
    json resolved = to_json(opts);
    resolved["seed"] = seed;
    resolved["labels"] = label_histogram(data);
    log_resolved(spec, dir, resolved, log);
}

void cmd_train(const CommandSpec& spec, std::ostream& log) {
    const json j = read_config(spec);
    check_keys(j, "", {"dataset", "streams", "window", "stride", "max_len", "fit_samples", "model", "batch_size",
                       "learning_rate", "epochs", "resume", "seed"});
    const std::uint64_t seed = seed_or(spec, j);

    model::ModelConfig mcfg;
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, "model", {"d_model", "heads", "dropout", "hidden", "max_len", "ablation"});
        mcfg.d_model = get_or<std::size_t>(m, "d_model", mcfg.d_model);
        mcfg.heads = get_or<std::size_t>(m, "heads", mcfg.heads);
        mcfg.dropout = get_or<double>(m, "dropout", mcfg.dropout);
        mcfg.hidden = get_or<std::size_t>(m, "hidden", mcfg.hidden);
        mcfg.max_len = get_or<std::size_t>(m, "max_len", mcfg.max_len);
        mcfg.ablation = model::parse_ablation(get_or<std::string>(m, "ablation", "full"));
    }
    if (spec.ablation) mcfg.ablation = model::parse_ablation(*spec.ablation);
    mcfg.validate();

    model::TrainConfig tcfg;
    tcfg.batch_size = get_or<std::size_t>(j, "batch_size", tcfg.batch_size);
    tcfg.learning_rate = get_or<double>(j, "learning_rate", tcfg.learning_rate);
    tcfg.epochs = get_or<std::size_t>(j, "epochs", tcfg.epochs);
    tcfg.seed = seed;
    tcfg.threads = 0;
    tcfg.validate();

    json resolved{{"seed", seed},
                  {"model",
                   {{"d_model", mcfg.d_model},
                    {"heads", mcfg.heads},
                    {"dropout", mcfg.dropout},
                    {"hidden", mcfg.hidden},
                    {"max_len", mcfg.max_len},
                    {"ablation", std::string(model::to_string(mcfg.ablation))}}},
                  {"batch_size", tcfg.batch_size},
                  {"learning_rate", tcfg.learning_rate},
                  {"epochs", tcfg.epochs}};

    std::vector<tokenizer::TokenSequence> data;
    if (j.contains("dataset")) {
        const fs::path ds = resolve(spec, get_or<std::string>(j, "dataset", ""));
        data = tokenizer::load_token_dataset(ds);
        resolved["dataset"] = ds.generic_string();
    } else {
        // Raw streams: tokenize in-process with the model's sequence length.
        json tj = j;
        tj["max_len"] = get_or<std::size_t>(j, "max_len", mcfg.max_len);
        const auto opts = tokenize_options(spec, tj);
        data = tokenize_streams(opts, seed);
        resolved["tokenize"] = to_json(opts);
    }
    resolved["labels"] = label_histogram(data);

    std::optional<model::Checkpoint> resume;
    std::optional<fs::path> resume_path = spec.resume;
    if (!resume_path && j.contains("resume")) resume_path = resolve(spec, get_or<std::string>(j, "resume", ""));
    if (resume_path) {
        resume = model::load_checkpoint(*resume_path);
        resolved["resume"] = resume_path->generic_string();
    }

    const fs::path dir = out_dir(spec, "model");
    log_resolved(spec, dir, resolved, log);
    const auto ckpt = model::train(data, tcfg, mcfg, std::move(resume));
    model::save_checkpoint(ckpt, dir / "checkpoint.ckpt");

    std::string table = "epoch,loss\n";
    char buf[64];
    for (std::size_t e = 0; e < ckpt.training->epoch_losses.size(); ++e) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", e + 1, ckpt.training->epoch_losses[e]);
        table += buf;
    }
    write_text(dir / "loss.csv", table);
    log << "train: " << data.size() << " sequences, " << ckpt.training->epochs_done << " epochs, final loss "
        << (ckpt.training->epoch_losses.empty() ? 0.0 : ckpt.training->epoch_losses.back()) << "\n";
}

// ---- detect / optimize / report -------------------------------------------

void override_seeds(json& j, std::uint64_t seed) {
    if (j.contains("seeds") && j.at("seeds").is_array()) {
        const std::size_t n = j.at("seeds").size();
        j["seeds"] = json::array();
        for (std::size_t i = 0; i < n; ++i) j["seeds"].push_back(seed + i);
    } else {
        j["base_seed"] = seed;
    }
}

void print_aggregates(const harness::Report& report, const std::string& kind, const std::string& metric,
                      std::ostream& log) {
    for (const auto& a : report.aggregates) {
        if (a.kind != kind || a.metric != metric) continue;
        log << "  " << a.instance << "  " << a.method << "  " << metric << " median " << a.median << "  IQR "
            << a.iqr << "  (n=" << a.n << ")\n";
    }
}

void cmd_experiment(const CommandSpec& spec, std::ostream& log, bool detect) {
    json j = read_config(spec);
    if (spec.seed) override_seeds(j, *spec.seed);
    if (spec.delta) j["metrics"]["delta"] = *spec.delta;
    // detect runs only the detector list, optimize only the arms.
    if (detect) {
        if (j.contains("optimizer") && j["optimizer"].is_object()) j["optimizer"].erase("arms");
    } else {
        if (j.contains("detectors") && j["detectors"].is_object()) j["detectors"].erase("list");
        if (!j.contains("optimizer") || !j["optimizer"].contains("arms")) {
            j["optimizer"]["arms"] = {"trace", "no-adapt", "oracle"};
        }
    }
    auto cfg = harness::parse_experiment_config(j);
    if (cfg.checkpoint) cfg.checkpoint = resolve(spec, *cfg.checkpoint);
    if (cfg.stream_file) cfg.stream_file = resolve(spec, *cfg.stream_file);
    const fs::path dir = out_dir(spec, cfg.out_dir);
    cfg.log_dir = dir / "logs";
    log_resolved(spec, dir, harness::to_json(cfg), log);

    const auto report = harness::run_experiment(cfg);
    harness::emit_report(report, dir, cfg.plots);
    log << (detect ? "detect" : "optimize") << ": " << report.rows.size() << " rows -> " << dir.string() << "\n";
    if (detect) {
        print_aggregates(report, "detect", "precision", log);
        print_aggregates(report, "detect", "f1", log);
    } else {
        print_aggregates(report, "optimize", "edt", log);
    }
}

void cmd_report(const CommandSpec& spec, std::ostream& log) {
    const json j = read_config(spec);
    check_keys(j, "", {"input", "plots"});
    fs::path input;
    if (spec.input) {
        input = *spec.input;
    } else if (j.contains("input")) {
        input = resolve(spec, get_or<std::string>(j, "input", ""));
    } else {
        throw ConfigError("input: a report.json path is required (--input or config key)");
    }
    std::ifstream in(input);
    if (!in) throw DataError("cannot open report: " + input.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError(input.string() + ": " + e.what());
    }
    const auto report = harness::report_from_json(doc);
    const bool plots = get_or<bool>(j, "plots", true);
    const fs::path dir = out_dir(spec, "report");
    log_resolved(spec, dir, json{{"input", input.generic_string()}, {"plots", plots}}, log);
    const auto files = harness::emit_report(report, dir, plots);
    log << "report: " << files.size() << " files -> " << dir.string() << "\n";
    print_aggregates(report, "detect", "f1", log);
    print_aggregates(report, "optimize", "edt", log);
}

// ---- cluster ---------------------------------------------------------------

void cmd_cluster(const CommandSpec& spec, std::ostream& log) {
    const json j = read_config(spec);
    check_keys(j, "", {"csv", "columns", "batch_size", "methods", "checkpoint", "k_max", "samples_per_batch",
                       "calibration", "fit_samples", "window", "stride", "max_len", "optimizer", "seed"});
    if (!j.contains("csv")) throw ConfigError("csv: input file is required");
    const fs::path csv = resolve(spec, get_or<std::string>(j, "csv", ""));
    const auto columns = get_or<std::vector<std::string>>(j, "columns", {});
    const auto batch_rows = get_or<std::size_t>(j, "batch_size", 200);
    const auto methods = get_or<std::vector<std::string>>(j, "methods", {"trace", "no-adapt"});
    const std::uint64_t seed = seed_or(spec, j);
    if (batch_rows < 2) throw ConfigError("batch_size: needs at least 2 rows per batch");
    if (methods.empty()) throw ConfigError("methods: at least one method is required");

    clusterapp::ClusterLoopConfig ccfg;
    if (j.contains("optimizer")) ccfg.loop = harness::parse_loop_config(j.at("optimizer"));
    ccfg.k_max = get_or<std::size_t>(j, "k_max", ccfg.k_max);
    ccfg.samples_per_batch = get_or<std::size_t>(j, "samples_per_batch", ccfg.samples_per_batch);
    if (ccfg.k_max < 2) throw ConfigError("k_max: must be at least 2");
    if (ccfg.samples_per_batch == 0) throw ConfigError("samples_per_batch: must be positive");

    detectors::DetectorSpec base;
    base.pipeline.calibration = get_or<std::size_t>(j, "calibration", base.pipeline.calibration);
    base.pipeline.surrogate.fit_samples = get_or<std::size_t>(j, "fit_samples", base.pipeline.surrogate.fit_samples);
    base.trace.windows.window = get_or<std::size_t>(j, "window", base.trace.windows.window);
    base.trace.windows.stride = get_or<std::size_t>(j, "stride", base.trace.windows.stride);
    base.trace.windows.max_len = get_or<std::size_t>(j, "max_len", base.trace.windows.max_len);
    base.trace.windows.validate();
    std::optional<fs::path> ckpt_path;
    if (j.contains("checkpoint")) ckpt_path = resolve(spec, get_or<std::string>(j, "checkpoint", ""));
    if (std::count(methods.begin(), methods.end(), "trace") > 0) {
        if (!ckpt_path) throw ConfigError("checkpoint: required by the trace method");
        base.checkpoint = std::make_shared<const model::Checkpoint>(model::load_checkpoint(*ckpt_path));
    }

    clusterapp::IngestionReport ingest;
    const auto batches = clusterapp::ingest_csv(csv, columns, batch_rows, &ingest);
    if (batches.empty()) throw DataError(csv.string() + ": no usable rows");

    const fs::path dir = out_dir(spec, "cluster");
    json resolved{{"csv", csv.generic_string()},
                  {"columns", batches.front().features},
                  {"batch_size", batch_rows},
                  {"methods", methods},
                  {"k_max", ccfg.k_max},
                  {"samples_per_batch", ccfg.samples_per_batch},
                  {"calibration", base.pipeline.calibration},
                  {"fit_samples", base.pipeline.surrogate.fit_samples},
                  {"seed", seed}};
    if (ckpt_path) resolved["checkpoint"] = ckpt_path->generic_string();
    log_resolved(spec, dir, resolved, log);

    std::string table = "method,batch,rows,dbi,drift_event\n";
    json summary = json::object();
    char buf[160];
    for (std::size_t m = 0; m < methods.size(); ++m) {
        detectors::DetectorSpec ds = base;
        ds.kind = methods[m] == "no-adapt" ? "none" : methods[m];
        ds.pipeline.surrogate.seed = derive_seed(seed, {m, 2});
        ds.trace.surrogate = ds.pipeline.surrogate;
        ds.seed = derive_seed(seed, {m, 3});
        auto det = detectors::make_detector(ds);
        auto loop = ccfg;
        loop.loop.seed = derive_seed(seed, {m, 4});
        const auto results = clusterapp::run_clustering(batches, *det, loop);

        std::vector<double> dbis;
        std::size_t drifts = 0;
        for (const auto& r : results) {
            std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%.17g,%d\n", methods[m].c_str(), r.batch, r.rows, r.dbi,
                          r.drift_event ? 1 : 0);
            table += buf;
            dbis.push_back(r.dbi);
            drifts += r.drift_event ? 1 : 0;
        }
        // Box-plot five-number summary per method.
        summary[methods[m]] = {{"min", *std::min_element(dbis.begin(), dbis.end())},
                               {"q1", harness::quantile(dbis, 0.25)},
                               {"median", harness::quantile(dbis, 0.5)},
                               {"q3", harness::quantile(dbis, 0.75)},
                               {"max", *std::max_element(dbis.begin(), dbis.end())},
                               {"drift_events", drifts},
                               {"dbi", dbis}};
        log << "cluster: " << methods[m] << " median DBI " << harness::quantile(dbis, 0.5) << " over "
            << dbis.size() << " batches\n";
    }
    write_text(dir / "cluster_dbi.csv", table);
    const json report{{"library_version", std::string(library_version())},
                      {"seed", seed},
                      {"ingestion",
                       {{"rows_read", ingest.rows_read},
                        {"rows_dropped", ingest.rows_dropped},
                        {"batches", ingest.batches}}},
                      {"methods", summary}};
    write_text(dir / "cluster_report.json", report.dump(2) + "\n");
}

}  // namespace

void run_command(const CommandSpec& spec, std::ostream& log) {
    if (spec.subcommand == "gen") return cmd_gen(spec, log);
    if (spec.subcommand == "tokenize") return cmd_tokenize(spec, log);
    if (spec.subcommand == "train") return cmd_train(spec, log);
    if (spec.subcommand == "detect") return cmd_experiment(spec, log, true);
    if (spec.subcommand == "optimize") return cmd_experiment(spec, log, false);
    if (spec.subcommand == "cluster") return cmd_cluster(spec, log);
    if (spec.subcommand == "report") return cmd_report(spec, log);
    throw ConfigError("unknown subcommand: " + spec.subcommand);
}

}  // namespace driftlab::cli

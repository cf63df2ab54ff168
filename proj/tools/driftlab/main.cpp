// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "driftlab/error.hpp"
#include "driftlab/version.hpp"

namespace {

enum ExitCode : int { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kNumeric = 4 };

}  // namespace

int main(int argc, char** argv) {
    using driftlab::cli::CommandSpec;
    CommandSpec spec;

    CLI::App app{"driftlab: drift detection and drift-aware streaming optimization"};
    app.set_version_flag("--version", std::string(driftlab::library_version()));
    app.require_subcommand(1);
    app.fallthrough();  // global flags are accepted after the subcommand too

    std::string config, out;
    std::uint64_t seed = 0;
    auto* config_opt = app.add_option("--config", config, "JSON config file")->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed, "Base seed (overrides the config)");
    auto* out_opt = app.add_option("--out", out, "Output directory (created if missing)");
    app.add_flag("--verbose,-v", spec.verbose, "Echo the resolved config");

    app.add_subcommand("gen", "Generate drifting benchmark streams");
    app.add_subcommand("tokenize", "Turn streams into labeled token sequences");
    auto* train = app.add_subcommand("train", "Train the drift estimator");
    std::string ablation, resume;
    auto* ablation_opt =
        train->add_option("--ablation", ablation, "full | no_pe | no_gmsa | no_cmsa | vanilla_head");
    auto* resume_opt = train->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
    auto* detect = app.add_subcommand("detect", "Run drift detectors and score them");
    std::size_t delta = 0;
    auto* delta_opt = detect->add_option("--delta", delta, "Matching tolerance in samples")->check(CLI::PositiveNumber);
    app.add_subcommand("optimize", "Run the streaming optimizer arms");
    app.add_subcommand("cluster", "Streaming clustering over a CSV file");
    auto* report = app.add_subcommand("report", "Re-emit tables and plots from report.json");
    std::string input;
    auto* input_opt = report->add_option("--input", input, "report.json to render")->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    spec.subcommand = app.get_subcommands().front()->get_name();
    if (*config_opt) spec.config = config;
    if (*seed_opt) spec.seed = seed;
    if (*out_opt) spec.out = out;
    if (*ablation_opt) spec.ablation = ablation;
    if (*resume_opt) spec.resume = resume;
    if (*delta_opt) spec.delta = delta;
    if (*input_opt) spec.input = input;

    try {
        driftlab::cli::run_command(spec, std::cout);
    } catch (const driftlab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const driftlab::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumeric;
    } catch (const driftlab::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kOther;
    }
    return kOk;
}

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

namespace driftlab::cli {

struct CommandSpec {
    std::string subcommand;
    std::optional<std::filesystem::path> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> out;
    bool verbose = false;

    // Subcommand-specific overrides.
    std::optional<std::string> ablation;
    std::optional<std::filesystem::path> resume;
    std::optional<std::size_t> delta;
    std::optional<std::filesystem::path> input;
};

/// Runs one subcommand. Library exceptions propagate; the caller maps them to exit codes.
void run_command(const CommandSpec& spec, std::ostream& log);

}  // namespace driftlab::cli

#pragma once

// Run configuration shared by all subcommands. Values come from defaults, then
// an INI file, then command-line overrides, in that order.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>

#include "powergan/data_pipeline.hpp"
#include "powergan/evaluation.hpp"
#include "powergan/trainer.hpp"

namespace powergan::cli {

struct GenerateSettings {
    std::size_t max_rejections_per_sample = 100;
    std::string format = "csv";
};

struct RunConfig {
    data::PreprocessConfig preprocess;
    train::TrainConfig train;
    GenerateSettings generate;
    eval::ClassifierConfig classifier;
    eval::EvaluationConfig evaluation;
    std::uint64_t seed = 0;
    // Where the seed came from: "default", "env", "file" or "flag".
    std::string seed_source = "default";

    // Copies the root seed into every component that draws random numbers.
    void propagate_seed();
};

using Tree = boost::property_tree::ptree;

// Every key the configuration understands, as "section.key".
const std::vector<std::string>& known_keys();

// Reads an INI file into a tree. Throws Error(IoError) / Error(InvalidConfig).
Tree read_ini(const std::filesystem::path& path);
// Applies "section.key=value" overrides. Throws Error(InvalidConfig) on malformed entries.
void apply_overrides(Tree& tree, const std::vector<std::string>& assignments);

// Builds the configuration from defaults overlaid with `tree`. Unknown keys and
// unparsable values throw Error(InvalidConfig). The seed falls back to the
// POWERGAN_SEED environment variable when the tree has none.
RunConfig resolve(const Tree& tree);

Tree to_tree(const RunConfig& cfg);
std::string to_ini(const RunConfig& cfg);
// Writes effective_config.ini into dir (created if needed).
void echo_config(const RunConfig& cfg, const std::filesystem::path& dir);

}  // namespace powergan::cli

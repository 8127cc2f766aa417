#pragma once

// Sampling labelled traces from a trained generator with non-negativity and
// energy-threshold rejection, and exporting them.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "powergan/data_pipeline.hpp"
#include "powergan/trainer.hpp"

namespace powergan::synth {

struct GenerationRequest {
    data::Appliance label = data::Appliance::fridge;
    std::size_t count = 1;
    std::uint64_t seed = 0;
    std::size_t max_rejections_per_sample = 100;
    data::FilterParams filter;  // energy threshold and steady-state rule
};

struct GenerationStats {
    std::size_t drawn = 0;
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    std::vector<std::string> warnings;
    double rejection_rate() const { return drawn == 0 ? 0.0 : static_cast<double>(rejected) / static_cast<double>(drawn); }
};

// Draws z ~ N(0, I), runs the generator at alpha = 1, clamps negatives to 0,
// denormalizes to watts and keeps windows whose energy above the steady state
// reaches the threshold. Windows are drawn in fixed-size batches, so results
// depend only on (checkpoint, request). Throws Error(GenerationStarved) when one
// slot is rejected more than max_rejections_per_sample times in a row, and
// Error(InvalidLabel) for labels the checkpoint was not trained on.
std::vector<data::Window> generate(const train::GeneratorBundle& bundle, const GenerationRequest& request,
                                   GenerationStats* stats = nullptr);

// Raw generator output for given latents, clamped and in watts, no rejection.
std::vector<data::Window> generate_unfiltered(const train::GeneratorBundle& bundle, data::Appliance label,
                                              std::size_t count, Rng& rng);

enum class ExportFormat { csv, pgw1 };
ExportFormat export_format_from_string(const std::string& name);

// csv: `path` is the output file (long format). pgw1: `path` is a directory and
// each label goes to <path>/<label>.pgw1. Throws Error(IoError).
void export_windows(std::span<const data::Window> windows, const std::filesystem::path& path, ExportFormat format);

}  // namespace powergan::synth

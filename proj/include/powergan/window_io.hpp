#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "powergan/data_pipeline.hpp"

namespace powergan::data {

// PGW1: "PGW1" | u32 window_length | u32 window_count | f32[count * length],
// all little-endian, windows row-major. One file per label.
void write_pgw1(const std::filesystem::path& path, std::span<const Window> windows);
std::vector<Window> read_pgw1(const std::filesystem::path& path, Appliance label, bool normalized);

nlohmann::json manifest_to_json(const NormalizationManifest& m);
NormalizationManifest manifest_from_json(const nlohmann::json& j);
void write_manifest(const std::filesystem::path& path, const NormalizationManifest& m);
NormalizationManifest read_manifest(const std::filesystem::path& path);

// Dataset directory: <label>.pgw1 per label plus manifest.json when normalized.
void write_dataset(const std::filesystem::path& dir, const BalancedSet& set);

struct Dataset {
    std::vector<Window> windows;
    std::optional<NormalizationManifest> manifest;  // present iff windows are normalized
};
Dataset read_dataset(const std::filesystem::path& dir);

// Windows in watts: normalized datasets are multiplied back by their scales.
std::vector<Window> read_dataset_watts(const std::filesystem::path& dir);

// Long CSV: header "label,window_id,sample_index,power_w", one row per sample.
void write_windows_csv(const std::filesystem::path& path, std::span<const Window> windows);
std::vector<Window> read_windows_csv(const std::filesystem::path& path);

}  // namespace powergan::data

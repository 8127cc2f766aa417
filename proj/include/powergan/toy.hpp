#pragma once

// Synthetic two-class corpus for desk-scale runs: dishwasher-like square-wave
// activations and fridge-like periodic spike trains, in watts.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "powergan/data_pipeline.hpp"

namespace powergan::toy {

struct ToyConfig {
    std::size_t window_length = 280;
    std::size_t windows_per_class = 64;
    std::uint64_t seed = 0;
};

inline constexpr data::Appliance kSquareClass = data::Appliance::dishwasher;
inline constexpr data::Appliance kSpikeClass = data::Appliance::fridge;

std::vector<float> square_wave_window(std::size_t length, Rng& rng);
std::vector<float> spike_train_window(std::size_t length, Rng& rng);

// Balanced, filter-passing windows in watts (class order: spikes, squares alternate).
std::vector<data::Window> make_toy_windows(const ToyConfig& cfg);

// Normalized dataset directory: <label>.pgw1 files plus manifest.json.
data::BalancedSet make_toy_dataset(const std::filesystem::path& out_dir, const ToyConfig& cfg);

// A wide raw CSV (timestamp_unix_s, aggregate_w, Appliance1, Appliance2) with
// `activations` square-wave episodes in column 1 and spike bursts in column 2,
// plus the matching label map JSON. Input for the preprocess command.
void write_toy_raw_csv(const std::filesystem::path& csv_path, const std::filesystem::path& label_map_path,
                       std::size_t activations, std::uint64_t seed);

}  // namespace powergan::toy

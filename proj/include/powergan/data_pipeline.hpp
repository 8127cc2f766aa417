#pragma once

// Appliance-trace preprocessing: activation-centred windowing, energy and
// edge-sparsity filtering, class balancing, per-class normalization and
// stage-resolution batch serving.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "powergan/rng.hpp"

namespace powergan::data {

enum class Appliance : int { fridge = 0, washing_machine, tumble_dryer, dishwasher, microwave };

inline constexpr std::array<Appliance, 5> kAllAppliances = {
    Appliance::fridge, Appliance::washing_machine, Appliance::tumble_dryer, Appliance::dishwasher,
    Appliance::microwave};

std::string_view to_string(Appliance a);
// Throws Error(InvalidLabel) for names outside the canonical five.
Appliance appliance_from_string(std::string_view name);

inline constexpr double kSamplePeriodSeconds = 8.0;
inline constexpr std::size_t kDefaultWindowLength = 2240;

// Uniformly resampled single-appliance measurement run.
struct RawSeries {
    Appliance label = Appliance::fridge;
    std::vector<std::int64_t> timestamps;  // epoch seconds
    std::vector<double> power;             // watts
};

struct Window {
    Appliance label = Appliance::fridge;
    std::vector<float> samples;
    bool normalized = false;
};

struct FilterParams {
    double activation_edge_watts = 50.0;
    double energy_threshold_wh = 33.33;
    double sparsity_min = 0.5;
    // Steady-state level = mean + steady_state_std_factor * std.
    double steady_state_std_factor = 0.5;

    void validate() const;
};

struct NormalizationManifest {
    std::map<Appliance, double> scales;  // watts per unit of normalized power
    std::size_t window_length = kDefaultWindowLength;
    double sample_period_s = kSamplePeriodSeconds;

    // Labels in class-index order (canonical enumeration order).
    std::vector<Appliance> labels() const;
    int class_index(Appliance a) const;
    Appliance label_at(int index) const;
    std::size_t num_classes() const { return scales.size(); }
    double scale(Appliance a) const;
};

// Forward-fills samples onto a uniform grid, splitting the record wherever
// consecutive timestamps are more than max_gap_s apart. Negative readings are
// clamped to zero; non-finite readings are dropped.
std::vector<RawSeries> resample_uniform(Appliance label, std::span<const std::int64_t> timestamps,
                                        std::span<const double> power, double period_s = kSamplePeriodSeconds,
                                        double max_gap_s = 120.0);

// Indices i where |power[i] - power[i-1]| > activation_edge_watts.
std::vector<std::size_t> detect_activations(const RawSeries& series, const FilterParams& params);

// One window of `length` samples per activation cluster. A window is centred
// on its activation and clamped to stay inside the series; activations that
// fall inside an already emitted window are skipped (earliest wins).
std::vector<Window> cut_windows(const RawSeries& series, std::span<const std::size_t> activations,
                                std::size_t length);

// Energy (Wh) of the samples at or above mean + 0.5 std.
double window_energy_above_steady(std::span<const float> samples, double sample_period_s = kSamplePeriodSeconds,
                                  double std_factor = 0.5);

// Hoyer sparsity of the first differences; 0 for a constant window.
double hoyer_sparsity(std::span<const float> samples);

bool passes_filters(std::span<const float> samples, const FilterParams& params,
                    double sample_period_s = kSamplePeriodSeconds);
std::vector<Window> filter_windows(std::span<const Window> windows, const FilterParams& params);

struct BalancedSet {
    std::vector<Window> windows;
    NormalizationManifest manifest;
};

// Undersamples every label to the smallest label count (seeded, without
// replacement) and divides each label by its maximum sample value.
// Throws Error(EmptyClass) if any expected label has no windows.
BalancedSet balance_and_normalize(std::vector<Window> windows, std::span<const Appliance> expected_labels,
                                  std::uint64_t seed);

std::vector<float> circular_shift(std::span<const float> samples, std::size_t offset);
// Non-overlapping windowed maximum; factor must divide the length.
std::vector<float> maxpool_downsample(std::span<const float> samples, std::size_t factor);

struct StageBatch {
    std::vector<float> signals;  // row-major [batch, length]
    std::vector<int> labels;     // class indices
    std::size_t length = 0;
    std::size_t size() const { return labels.size(); }
};

// Selected windows, each circularly shifted by an independent uniform offset
// and max-pooled down by `factor`.
StageBatch batch_for_stage(std::span<const Window> windows, std::span<const std::size_t> selection,
                           std::size_t factor, const NormalizationManifest& manifest, Rng& rng);

// ---------------------------------------------------------------------------
// Whole-directory ingest of REFIT-style wide CSVs.

struct PreprocessConfig {
    FilterParams filter;
    std::size_t window_length = kDefaultWindowLength;
    double sample_period_s = kSamplePeriodSeconds;
    double max_gap_s = 120.0;
    std::uint64_t seed = 0;
};

struct PreprocessReport {
    std::map<Appliance, std::size_t> windows_cut;
    std::map<Appliance, std::size_t> windows_accepted;
    std::size_t files_read = 0;
};

// Label map JSON: {"<csv column>": "<canonical label>", ...}.
std::map<std::string, Appliance> read_label_map(const std::filesystem::path& path);

// Reads every *.csv under input_dir (sorted by name), windows and filters each
// mapped column, then balances and normalizes the union.
BalancedSet preprocess_directory(const std::filesystem::path& input_dir, const std::filesystem::path& label_map,
                                 const PreprocessConfig& config, PreprocessReport* report = nullptr);

}  // namespace powergan::data

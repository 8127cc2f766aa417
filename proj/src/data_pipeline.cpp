#include "powergan/data_pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "powergan/errors.hpp"

namespace powergan::data {

std::string_view to_string(Appliance a) {
    switch (a) {
        case Appliance::fridge: return "fridge";
        case Appliance::washing_machine: return "washing_machine";
        case Appliance::tumble_dryer: return "tumble_dryer";
        case Appliance::dishwasher: return "dishwasher";
        case Appliance::microwave: return "microwave";
    }
    return "unknown";
}

Appliance appliance_from_string(std::string_view name) {
    for (Appliance a : kAllAppliances)
        if (to_string(a) == name) return a;
    throw Error(ErrorCode::InvalidLabel, "unknown appliance label '" + std::string(name) + "'");
}

void FilterParams::validate() const {
    if (!(activation_edge_watts > 0) || !(energy_threshold_wh > 0))
        throw Error(ErrorCode::InvalidConfig, "filter thresholds must be positive");
    if (!(sparsity_min >= 0 && sparsity_min <= 1))
        throw Error(ErrorCode::InvalidConfig, "sparsity_min must lie in [0, 1]");
    if (!(steady_state_std_factor >= 0))
        throw Error(ErrorCode::InvalidConfig, "steady_state_std_factor must be non-negative");
}

std::vector<Appliance> NormalizationManifest::labels() const {
    std::vector<Appliance> out;
    for (const auto& [label, s] : scales) out.push_back(label);
    return out;
}

int NormalizationManifest::class_index(Appliance a) const {
    int i = 0;
    for (const auto& [label, s] : scales) {
        if (label == a) return i;
        ++i;
    }
    throw Error(ErrorCode::InvalidLabel, "label '" + std::string(to_string(a)) + "' not in manifest");
}

Appliance NormalizationManifest::label_at(int index) const {
    if (index < 0 || index >= static_cast<int>(scales.size()))
        throw Error(ErrorCode::InvalidLabel, "class index " + std::to_string(index) + " out of range");
    return std::next(scales.begin(), index)->first;
}

double NormalizationManifest::scale(Appliance a) const {
    auto it = scales.find(a);
    if (it == scales.end())
        throw Error(ErrorCode::InvalidLabel, "label '" + std::string(to_string(a)) + "' not in manifest");
    return it->second;
}

std::vector<RawSeries> resample_uniform(Appliance label, std::span<const std::int64_t> timestamps,
                                        std::span<const double> power, double period_s, double max_gap_s) {
    if (timestamps.size() != power.size())
        throw Error(ErrorCode::InvalidShape, "timestamps and power differ in length");
    std::vector<std::pair<std::int64_t, double>> points;
    points.reserve(power.size());
    for (std::size_t i = 0; i < power.size(); ++i)
        if (std::isfinite(power[i])) points.emplace_back(timestamps[i], std::max(0.0, power[i]));
    std::stable_sort(points.begin(), points.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    // Keep the last reading for duplicated timestamps.
    std::vector<std::pair<std::int64_t, double>> unique;
    for (const auto& p : points) {
        if (!unique.empty() && unique.back().first == p.first) unique.back() = p;
        else unique.push_back(p);
    }

    std::vector<RawSeries> out;
    std::size_t begin = 0;
    while (begin < unique.size()) {
        std::size_t end = begin + 1;
        while (end < unique.size() && static_cast<double>(unique[end].first - unique[end - 1].first) <= max_gap_s) ++end;
        RawSeries s;
        s.label = label;
        const std::int64_t t0 = unique[begin].first;
        const double span_s = static_cast<double>(unique[end - 1].first - t0);
        const auto count = static_cast<std::size_t>(std::floor(span_s / period_s)) + 1;
        s.timestamps.reserve(count);
        s.power.reserve(count);
        std::size_t src = begin;
        for (std::size_t g = 0; g < count; ++g) {
            const auto t = t0 + static_cast<std::int64_t>(std::llround(static_cast<double>(g) * period_s));
            while (src + 1 < end && unique[src + 1].first <= t) ++src;
            s.timestamps.push_back(t);
            s.power.push_back(unique[src].second);
        }
        out.push_back(std::move(s));
        begin = end;
    }
    return out;
}

std::vector<std::size_t> detect_activations(const RawSeries& series, const FilterParams& params) {
    std::vector<std::size_t> out;
    for (std::size_t i = 1; i < series.power.size(); ++i)
        if (std::abs(series.power[i] - series.power[i - 1]) > params.activation_edge_watts) out.push_back(i);
    return out;
}

std::vector<Window> cut_windows(const RawSeries& series, std::span<const std::size_t> activations,
                                std::size_t length) {
    const std::size_t n = series.power.size();
    if (n < length)
        throw Error(ErrorCode::SeriesTooShort,
                    "series of " + std::to_string(n) + " samples is shorter than window length " + std::to_string(length));
    std::vector<std::size_t> sorted(activations.begin(), activations.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<Window> out;
    bool have_last = false;
    std::size_t last_start = 0;
    for (std::size_t a : sorted) {
        if (a >= n) continue;
        if (have_last && a >= last_start && a < last_start + length) continue;
        const std::size_t half = length / 2;
        std::size_t start = a > half ? a - half : 0;
        start = std::min(start, n - length);
        Window w;
        w.label = series.label;
        w.samples.reserve(length);
        for (std::size_t i = start; i < start + length; ++i) w.samples.push_back(static_cast<float>(series.power[i]));
        out.push_back(std::move(w));
        have_last = true;
        last_start = start;
    }
    return out;
}

double window_energy_above_steady(std::span<const float> samples, double sample_period_s, double std_factor) {
    if (samples.empty()) return 0.0;
    const double n = static_cast<double>(samples.size());
    double mean = 0.0;
    for (float v : samples) mean += v;
    mean /= n;
    double var = 0.0;
    for (float v : samples) var += (v - mean) * (v - mean);
    const double threshold = mean + std_factor * std::sqrt(var / n);
    double energy = 0.0;
    for (float v : samples)
        if (v >= threshold) energy += v;
    return energy * sample_period_s / 3600.0;
}

double hoyer_sparsity(std::span<const float> samples) {
    if (samples.size() < 2) return 0.0;
    const std::size_t n = samples.size() - 1;
    double l1 = 0.0, l2 = 0.0;
    for (std::size_t i = 1; i < samples.size(); ++i) {
        const double d = static_cast<double>(samples[i]) - static_cast<double>(samples[i - 1]);
        l1 += std::abs(d);
        l2 += d * d;
    }
    if (l2 == 0.0) return 0.0;
    if (n == 1) return 1.0;
    const double root_n = std::sqrt(static_cast<double>(n));
    const double s = (root_n - l1 / std::sqrt(l2)) / (root_n - 1.0);
    return std::clamp(s, 0.0, 1.0);
}

bool passes_filters(std::span<const float> samples, const FilterParams& params, double sample_period_s) {
    return window_energy_above_steady(samples, sample_period_s, params.steady_state_std_factor) >=
               params.energy_threshold_wh &&
           hoyer_sparsity(samples) > params.sparsity_min;
}

std::vector<Window> filter_windows(std::span<const Window> windows, const FilterParams& params) {
    std::vector<Window> out;
    for (const auto& w : windows)
        if (passes_filters(w.samples, params)) out.push_back(w);
    return out;
}

BalancedSet balance_and_normalize(std::vector<Window> windows, std::span<const Appliance> expected_labels,
                                  std::uint64_t seed) {
    std::map<Appliance, std::vector<std::size_t>> by_label;
    for (Appliance a : expected_labels) by_label[a];
    for (std::size_t i = 0; i < windows.size(); ++i) by_label[windows[i].label].push_back(i);
    if (by_label.empty()) throw Error(ErrorCode::EmptyClass, "no labels and no windows");

    std::size_t target = std::numeric_limits<std::size_t>::max();
    for (const auto& [label, idx] : by_label) {
        if (idx.empty()) throw Error(ErrorCode::EmptyClass, "no windows for label '" + std::string(to_string(label)) + "'");
        target = std::min(target, idx.size());
    }

    BalancedSet out;
    out.manifest.window_length = windows.front().samples.size();
    for (auto& [label, idx] : by_label) {
        // Partial Fisher-Yates: the first `target` entries are a uniform sample without replacement.
        Rng rng(Rng::derive(seed, "balance", {static_cast<std::uint64_t>(label)}));
        for (std::size_t i = 0; i < target; ++i) std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
        idx.resize(target);
        std::sort(idx.begin(), idx.end());

        float peak = 0.0f;
        for (std::size_t i : idx)
            for (float v : windows[i].samples) peak = std::max(peak, v);
        if (!(peak > 0.0f))
            throw Error(ErrorCode::EmptyClass, "label '" + std::string(to_string(label)) + "' has no positive samples");
        out.manifest.scales[label] = peak;
        for (std::size_t i : idx) {
            Window w = std::move(windows[i]);
            if (w.samples.size() != out.manifest.window_length)
                throw Error(ErrorCode::InvalidShape, "windows of differing length");
            for (float& v : w.samples) v = std::clamp(v / peak, 0.0f, 1.0f);
            w.normalized = true;
            out.windows.push_back(std::move(w));
        }
    }
    return out;
}

std::vector<float> circular_shift(std::span<const float> samples, std::size_t offset) {
    const std::size_t n = samples.size();
    std::vector<float> out(n);
    if (n == 0) return out;
    offset %= n;
    for (std::size_t i = 0; i < n; ++i) out[(i + offset) % n] = samples[i];
    return out;
}

std::vector<float> maxpool_downsample(std::span<const float> samples, std::size_t factor) {
    if (factor == 0 || samples.size() % factor != 0)
        throw Error(ErrorCode::InvalidShape, "downsample factor must divide the window length");
    std::vector<float> out(samples.size() / factor);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = *std::max_element(samples.begin() + i * factor, samples.begin() + (i + 1) * factor);
    return out;
}

StageBatch batch_for_stage(std::span<const Window> windows, std::span<const std::size_t> selection,
                           std::size_t factor, const NormalizationManifest& manifest, Rng& rng) {
    StageBatch batch;
    for (std::size_t idx : selection) {
        const Window& w = windows[idx];
        const auto shifted = circular_shift(w.samples, rng.index(w.samples.size()));
        const auto pooled = factor == 1 ? shifted : maxpool_downsample(shifted, factor);
        if (batch.length == 0) batch.length = pooled.size();
        else if (batch.length != pooled.size()) throw Error(ErrorCode::InvalidShape, "windows of differing length");
        batch.signals.insert(batch.signals.end(), pooled.begin(), pooled.end());
        batch.labels.push_back(manifest.class_index(w.label));
    }
    return batch;
}

// ---------------------------------------------------------------------------

std::map<std::string, Appliance> read_label_map(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open label map " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, "label map " + path.string() + ": " + e.what());
    }
    std::map<std::string, Appliance> out;
    for (const auto& [column, label] : j.items()) out[column] = appliance_from_string(label.get<std::string>());
    return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        const auto b = cell.find_first_not_of(" \t\r\"");
        const auto e = cell.find_last_not_of(" \t\r\"");
        cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end;
}

}  // namespace

BalancedSet preprocess_directory(const std::filesystem::path& input_dir, const std::filesystem::path& label_map,
                                 const PreprocessConfig& config, PreprocessReport* report) {
    config.filter.validate();
    const auto columns = read_label_map(label_map);
    std::vector<Appliance> expected;
    for (const auto& [col, label] : columns)
        if (std::find(expected.begin(), expected.end(), label) == expected.end()) expected.push_back(label);

    std::vector<std::filesystem::path> files;
    std::error_code ec;
    for (const auto& entry : std::filesystem::directory_iterator(input_dir, ec))
        if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
    if (ec) throw Error(ErrorCode::IoError, "cannot list " + input_dir.string() + ": " + ec.message());
    std::sort(files.begin(), files.end());

    PreprocessReport local;
    PreprocessReport& rep = report ? *report : local;
    std::vector<Window> accepted;
    for (const auto& file : files) {
        std::ifstream in(file);
        if (!in) throw Error(ErrorCode::IoError, "cannot open " + file.string());
        std::string line;
        if (!std::getline(in, line)) continue;
        const auto header = split_csv_line(line);
        std::vector<std::pair<std::size_t, Appliance>> mapped;
        for (std::size_t c = 1; c < header.size(); ++c) {
            auto it = columns.find(header[c]);
            if (it != columns.end()) mapped.emplace_back(c, it->second);
        }
        std::vector<std::vector<std::int64_t>> times(mapped.size());
        std::vector<std::vector<double>> values(mapped.size());
        while (std::getline(in, line)) {
            if (line.empty() || line == "\r") continue;
            const auto cells = split_csv_line(line);
            double t = 0;
            if (cells.empty() || !parse_double(cells[0], t)) continue;
            for (std::size_t m = 0; m < mapped.size(); ++m) {
                double v = 0;
                if (mapped[m].first < cells.size() && parse_double(cells[mapped[m].first], v)) {
                    times[m].push_back(static_cast<std::int64_t>(std::llround(t)));
                    values[m].push_back(v);
                }
            }
        }
        ++rep.files_read;
        for (std::size_t m = 0; m < mapped.size(); ++m) {
            const Appliance label = mapped[m].second;
            for (const auto& series : resample_uniform(label, times[m], values[m], config.sample_period_s, config.max_gap_s)) {
                if (series.power.size() < config.window_length) continue;
                auto windows = cut_windows(series, detect_activations(series, config.filter), config.window_length);
                rep.windows_cut[label] += windows.size();
                for (auto& w : windows) {
                    if (!passes_filters(w.samples, config.filter, config.sample_period_s)) continue;
                    rep.windows_accepted[label] += 1;
                    accepted.push_back(std::move(w));
                }
            }
        }
    }
    auto set = balance_and_normalize(std::move(accepted), expected, config.seed);
    set.manifest.sample_period_s = config.sample_period_s;
    return set;
}

}  // namespace powergan::data

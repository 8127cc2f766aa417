#include "powergan/toy.hpp"

#include <algorithm>
#include <fstream>

#include "powergan/errors.hpp"
#include "powergan/window_io.hpp"

namespace powergan::toy {

namespace {

std::size_t uniform_int(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

}  // namespace

std::vector<float> square_wave_window(std::size_t length, Rng& rng) {
    std::vector<float> w(length, 0.0f);
    const std::size_t cycles = uniform_int(rng, 1, 3);
    const std::size_t span = length / cycles;
    for (std::size_t c = 0; c < cycles; ++c) {
        const std::size_t on = uniform_int(rng, span / 4, span / 2);
        const std::size_t start = c * span + rng.index(span - on);
        const auto level = static_cast<float>(1800 + 600 * rng.uniform());
        std::fill_n(w.begin() + static_cast<std::ptrdiff_t>(start), on, level);
    }
    return w;
}

std::vector<float> spike_train_window(std::size_t length, Rng& rng) {
    std::vector<float> w(length, 0.0f);
    const std::size_t period = uniform_int(rng, length / 14, length / 7);
    const std::size_t width = uniform_int(rng, 3, 5);
    const auto level = static_cast<float>(1200 + 800 * rng.uniform());
    for (std::size_t t = rng.index(period); t + width <= length; t += period)
        std::fill_n(w.begin() + static_cast<std::ptrdiff_t>(t), width, level);
    return w;
}

std::vector<data::Window> make_toy_windows(const ToyConfig& cfg) {
    if (cfg.window_length < 32) throw Error(ErrorCode::InvalidConfig, "toy window length must be at least 32");
    Rng rng(Rng::derive(cfg.seed, "toy"));
    const data::FilterParams filter;
    std::vector<data::Window> out;
    for (std::size_t i = 0; i < cfg.windows_per_class; ++i) {
        for (auto label : {kSpikeClass, kSquareClass}) {
            // Redraw until the window passes the training filters; the
            // generators are tuned so this almost never loops.
            for (int attempt = 0;; ++attempt) {
                auto s = label == kSquareClass ? square_wave_window(cfg.window_length, rng)
                                               : spike_train_window(cfg.window_length, rng);
                if (data::passes_filters(s, filter)) {
                    out.push_back(data::Window{label, std::move(s), false});
                    break;
                }
                if (attempt > 1000) throw Error(ErrorCode::InvalidConfig, "toy windows fail the default filters");
            }
        }
    }
    return out;
}

data::BalancedSet make_toy_dataset(const std::filesystem::path& out_dir, const ToyConfig& cfg) {
    const std::vector<data::Appliance> labels = {kSpikeClass, kSquareClass};
    auto set = data::balance_and_normalize(make_toy_windows(cfg), labels, cfg.seed);
    data::write_dataset(out_dir, set);
    return set;
}

void write_toy_raw_csv(const std::filesystem::path& csv_path, const std::filesystem::path& label_map_path,
                       std::size_t activations, std::uint64_t seed) {
    Rng rng(Rng::derive(seed, "toy_csv"));
    constexpr std::size_t kGap = 600;  // samples between episodes, well beyond one window
    const std::size_t n = (activations + 1) * kGap;
    std::vector<float> dish(n, 0.0f), fridge(n, 0.0f);
    for (std::size_t a = 0; a < activations; ++a) {
        const std::size_t at = (a + 1) * kGap - 100;
        const auto sq = square_wave_window(200, rng);
        const auto sp = spike_train_window(200, rng);
        std::copy(sq.begin(), sq.end(), dish.begin() + static_cast<std::ptrdiff_t>(at));
        std::copy(sp.begin(), sp.end(), fridge.begin() + static_cast<std::ptrdiff_t>(at));
    }
    if (csv_path.has_parent_path()) std::filesystem::create_directories(csv_path.parent_path());
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw Error(ErrorCode::IoError, "cannot write " + csv_path.string());
    csv << "timestamp_unix_s,aggregate_w,Appliance1,Appliance2\n";
    constexpr std::int64_t t0 = 1388534400;
    for (std::size_t i = 0; i < n; ++i) {
        // Whole watts keep the text fixture platform-independent.
        const long d = std::lround(dish[i]), f = std::lround(fridge[i]);
        csv << t0 + 8 * static_cast<std::int64_t>(i) << ',' << d + f << ',' << d << ',' << f << '\n';
    }
    std::ofstream map(label_map_path, std::ios::trunc);
    if (!map) throw Error(ErrorCode::IoError, "cannot write " + label_map_path.string());
    map << "{\n  \"Appliance1\": \"dishwasher\",\n  \"Appliance2\": \"fridge\"\n}\n";
}

}  // namespace powergan::toy

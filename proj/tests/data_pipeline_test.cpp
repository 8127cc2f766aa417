#include "powergan/data_pipeline.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "powergan/errors.hpp"
#include "powergan/window_io.hpp"

namespace powergan::data {
namespace {

RawSeries series_of(std::vector<double> power) {
    RawSeries s;
    s.power = std::move(power);
    for (std::size_t i = 0; i < s.power.size(); ++i) s.timestamps.push_back(static_cast<std::int64_t>(8 * i));
    return s;
}

// Brute-force references, written without sharing code with the library.
double energy_oracle(const std::vector<float>& w) {
    const double n = static_cast<double>(w.size());
    double sum = 0, sum_sq = 0;
    for (float v : w) {
        sum += v;
        sum_sq += static_cast<double>(v) * v;
    }
    const double mean = sum / n;
    const double sd = std::sqrt(std::max(0.0, sum_sq / n - mean * mean));
    const double t = mean + 0.5 * sd;
    double e = 0;
    for (float v : w) e += v >= t ? v * 8.0 / 3600.0 : 0.0;
    return e;
}

double hoyer_oracle(const std::vector<double>& delta) {
    double l1 = 0, l2 = 0;
    for (double d : delta) {
        l1 += std::fabs(d);
        l2 += d * d;
    }
    const double rn = std::sqrt(static_cast<double>(delta.size()));
    return (rn - l1 / std::sqrt(l2)) / (rn - 1);
}

std::vector<float> from_deltas(const std::vector<double>& delta) {
    std::vector<float> w{0.0f};
    for (double d : delta) w.push_back(static_cast<float>(w.back() + d));
    return w;
}

Window window_of(Appliance a, std::vector<float> s) { return Window{a, std::move(s), false}; }

TEST(DetectActivations, Examples) {
    FilterParams p;
    EXPECT_TRUE(detect_activations(series_of(std::vector<double>(100, 0.0)), p).empty());
    EXPECT_EQ(detect_activations(series_of({0, 60, 60, 0}), p), (std::vector<std::size_t>{1, 3}));
    EXPECT_TRUE(detect_activations(series_of({0, 50, 0}), p).empty());
    EXPECT_TRUE(detect_activations(series_of({}), p).empty());
}

TEST(CutWindows, CentresAndClamps) {
    std::vector<double> power(8000);
    std::iota(power.begin(), power.end(), 0.0);
    const auto s = series_of(power);
    const std::vector<std::size_t> centre = {5000};
    auto w = cut_windows(s, centre, 2240);
    ASSERT_EQ(w.size(), 1u);
    EXPECT_EQ(w[0].samples.size(), 2240u);
    EXPECT_EQ(w[0].samples.front(), 3880.0f);
    EXPECT_EQ(w[0].samples.back(), 6119.0f);

    const std::vector<std::size_t> left = {100};
    EXPECT_EQ(cut_windows(s, left, 2240)[0].samples.front(), 0.0f);
    const std::vector<std::size_t> right = {7990};
    EXPECT_EQ(cut_windows(s, right, 2240)[0].samples.back(), 7999.0f);
}

TEST(CutWindows, SuppressesOverlappingCentres) {
    const auto s = series_of(std::vector<double>(8000, 1.0));
    const std::vector<std::size_t> close = {5000, 5010};
    EXPECT_EQ(cut_windows(s, close, 2240).size(), 1u);
    const std::vector<std::size_t> apart = {1000, 5000};
    EXPECT_EQ(cut_windows(s, apart, 2240).size(), 2u);
}

TEST(CutWindows, TooShortSeries) {
    const std::vector<std::size_t> a = {1};
    try {
        cut_windows(series_of(std::vector<double>(100, 1.0)), a, 2240);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::SeriesTooShort);
    }
}

TEST(WindowEnergy, Examples) {
    EXPECT_EQ(window_energy_above_steady(std::vector<float>(2240, 0.0f)), 0.0);

    std::vector<float> block(2240, 0.0f);
    std::fill(block.begin() + 900, block.begin() + 1350, 1000.0f);
    const double expected = energy_oracle(block);
    EXPECT_NEAR(expected, 1000.0, 1e-9);  // every 1000 W sample clears the threshold
    EXPECT_NEAR(window_energy_above_steady(block), expected, 1e-9);

    // std = 0 puts the threshold at the level itself; all samples qualify.
    EXPECT_NEAR(window_energy_above_steady(std::vector<float>(2240, 100.0f)), 2240 * 100.0 * 8 / 3600, 1e-9);
}

TEST(WindowEnergy, MatchesOracleOnRandomWindows) {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<float> w(300);
        for (auto& v : w) v = static_cast<float>(std::max(0.0, 500 + 400 * rng.normal()));
        EXPECT_NEAR(window_energy_above_steady(w), energy_oracle(w), 1e-9);
    }
}

TEST(HoyerSparsity, Examples) {
    std::vector<double> one_hot(50, 0.0);
    one_hot[7] = 3.0;
    EXPECT_NEAR(hoyer_sparsity(from_deltas(one_hot)), 1.0, 1e-12);
    EXPECT_NEAR(hoyer_sparsity(from_deltas(std::vector<double>(50, 2.0))), 0.0, 1e-12);
    EXPECT_NEAR(hoyer_sparsity(from_deltas({3, 4, 0, 0})), 0.6, 1e-12);
    EXPECT_EQ(hoyer_sparsity(std::vector<float>(10, 4.0f)), 0.0);
}

TEST(HoyerSparsity, BoundedAndScaleInvariant) {
    Rng rng(5);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 2 + rng.index(200);
        std::vector<float> w(n);
        for (auto& v : w) v = static_cast<float>(rng.normal() * std::exp(3 * rng.normal()));
        const double s = hoyer_sparsity(w);
        EXPECT_GE(s, 0.0);
        EXPECT_LE(s, 1.0);
        // Power-of-two and sign scalings are exact in float, so the ratio must be unchanged.
        for (float c : {2.0f, -1.0f, 0.25f, -1024.0f}) {
            std::vector<float> scaled(w);
            for (auto& v : scaled) v *= c;
            EXPECT_NEAR(hoyer_sparsity(scaled), s, 1e-9);
        }
    }
}

TEST(FilterWindows, Examples) {
    FilterParams p;
    EXPECT_TRUE(filter_windows(std::vector<Window>{window_of(Appliance::fridge, std::vector<float>(2240, 0.0f))}, p).empty());

    std::vector<float> clean(2240, 0.0f);
    std::fill(clean.begin() + 1000, clean.begin() + 1225, 2000.0f);  // 30 min at 8 s
    EXPECT_NEAR(window_energy_above_steady(clean), 1000.0, 1e-9);
    std::vector<double> delta(2239, 0.0);
    delta[999] = 2000;
    delta[1224] = -2000;
    EXPECT_GT(hoyer_oracle(delta), 0.5);
    EXPECT_EQ(filter_windows(std::vector<Window>{window_of(Appliance::fridge, clean)}, p).size(), 1u);

    Rng rng(9);
    std::vector<float> noise(2240);
    for (auto& v : noise) v = static_cast<float>(2000 + 300 * rng.normal());
    std::vector<double> nd;
    for (std::size_t i = 1; i < noise.size(); ++i) nd.push_back(static_cast<double>(noise[i]) - noise[i - 1]);
    EXPECT_LT(hoyer_oracle(nd), 0.3);
    EXPECT_GT(window_energy_above_steady(noise), p.energy_threshold_wh);
    EXPECT_TRUE(filter_windows(std::vector<Window>{window_of(Appliance::fridge, noise)}, p).empty());
}

TEST(FilterWindows, Idempotent) {
    Rng rng(13);
    std::vector<Window> ws;
    for (int i = 0; i < 60; ++i) {
        std::vector<float> w(400, 0.0f);
        const auto start = rng.index(300);
        const auto len = 10 + rng.index(80);
        const float level = static_cast<float>(100 + 3000 * rng.uniform());
        for (std::size_t t = start; t < std::min<std::size_t>(400, start + len); ++t) w[t] = level;
        if (i % 3 == 0)
            for (auto& v : w) v += static_cast<float>(50 * std::abs(rng.normal()));
        ws.push_back(window_of(Appliance::fridge, w));
    }
    const auto once = filter_windows(ws, FilterParams{});
    const auto twice = filter_windows(once, FilterParams{});
    ASSERT_EQ(once.size(), twice.size());
    EXPECT_GT(once.size(), 0u);
    EXPECT_LT(once.size(), ws.size());
    for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(once[i].samples, twice[i].samples);
}

std::vector<Window> labelled(Appliance a, int count, float peak) {
    std::vector<Window> out;
    for (int i = 0; i < count; ++i) {
        std::vector<float> s(16, 0.0f);
        s[i % 16] = peak * static_cast<float>(i + 1) / static_cast<float>(count);
        out.push_back(window_of(a, s));
    }
    return out;
}

TEST(BalanceAndNormalize, UndersamplesAndScales) {
    auto ws = labelled(Appliance::fridge, 10, 3000.0f);
    auto more = labelled(Appliance::microwave, 4, 1200.0f);
    ws.insert(ws.end(), more.begin(), more.end());
    const std::vector<Appliance> labels = {Appliance::fridge, Appliance::microwave};
    const auto set = balance_and_normalize(ws, labels, 42);
    std::map<Appliance, int> counts;
    std::map<Appliance, float> peaks;
    for (const auto& w : set.windows) {
        counts[w.label]++;
        EXPECT_TRUE(w.normalized);
        for (float v : w.samples) {
            EXPECT_GE(v, 0.0f);
            EXPECT_LE(v, 1.0f);
            peaks[w.label] = std::max(peaks[w.label], v);
        }
    }
    EXPECT_EQ(counts[Appliance::fridge], 4);
    EXPECT_EQ(counts[Appliance::microwave], 4);
    EXPECT_EQ(peaks[Appliance::fridge], 1.0f);
    EXPECT_EQ(peaks[Appliance::microwave], 1.0f);
    EXPECT_DOUBLE_EQ(set.manifest.scale(Appliance::microwave), 1200.0);

    const auto again = balance_and_normalize(ws, labels, 42);
    ASSERT_EQ(again.windows.size(), set.windows.size());
    for (std::size_t i = 0; i < set.windows.size(); ++i) EXPECT_EQ(again.windows[i].samples, set.windows[i].samples);
}

TEST(BalanceAndNormalize, EmptyClass) {
    const std::vector<Appliance> labels = {Appliance::fridge, Appliance::dishwasher};
    try {
        balance_and_normalize(labelled(Appliance::fridge, 3, 10.0f), labels, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::EmptyClass);
    }
}

TEST(BatchForStage, ShiftAndPool) {
    const std::vector<float> x = {1, 5, 2, 0};
    EXPECT_EQ(circular_shift(x, 0), x);
    EXPECT_EQ(circular_shift(x, 1), (std::vector<float>{0, 1, 5, 2}));
    EXPECT_EQ(maxpool_downsample(x, 2), (std::vector<float>{5, 2}));
    EXPECT_EQ(maxpool_downsample(x, 1), x);
    EXPECT_THROW(maxpool_downsample(x, 3), Error);
}

TEST(BatchForStage, FullResolutionIsARotationAndPoolingKeepsMax) {
    Rng data_rng(17);
    std::vector<Window> ws;
    NormalizationManifest m;
    m.scales[Appliance::fridge] = 1.0;
    m.scales[Appliance::dishwasher] = 1.0;
    for (int i = 0; i < 6; ++i) {
        std::vector<float> s(64);
        for (auto& v : s) v = static_cast<float>(data_rng.uniform());
        ws.push_back(Window{i % 2 ? Appliance::dishwasher : Appliance::fridge, s, true});
    }
    const std::vector<std::size_t> sel = {0, 1, 2, 3, 4, 5};
    Rng rng(1);
    const auto full = batch_for_stage(ws, sel, 1, m, rng);
    EXPECT_EQ(full.length, 64u);
    EXPECT_EQ(full.labels, (std::vector<int>{0, 1, 0, 1, 0, 1}));
    for (std::size_t b = 0; b < sel.size(); ++b) {
        std::vector<float> row(full.signals.begin() + b * 64, full.signals.begin() + (b + 1) * 64);
        bool is_rotation = false;
        for (std::size_t k = 0; k < 64 && !is_rotation; ++k) is_rotation = circular_shift(ws[b].samples, k) == row;
        EXPECT_TRUE(is_rotation);
    }
    Rng rng2(1);
    const auto pooled = batch_for_stage(ws, sel, 8, m, rng2);
    EXPECT_EQ(pooled.length, 8u);
    for (std::size_t b = 0; b < sel.size(); ++b)
        EXPECT_EQ(*std::max_element(pooled.signals.begin() + b * 8, pooled.signals.begin() + (b + 1) * 8),
                  *std::max_element(ws[b].samples.begin(), ws[b].samples.end()));
}

TEST(ResampleUniform, ForwardFillsAndSplitsOnLongGaps) {
    const std::vector<std::int64_t> t = {0, 8, 20, 40, 400, 408};
    const std::vector<double> p = {1, 2, 3, -5, 7, std::nan("")};
    const auto out = resample_uniform(Appliance::fridge, t, p);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0].timestamps, (std::vector<std::int64_t>{0, 8, 16, 24, 32, 40}));
    EXPECT_EQ(out[0].power, (std::vector<double>{1, 2, 2, 3, 3, 0}));
    EXPECT_EQ(out[1].power, (std::vector<double>{7}));
}

class IoTest : public ::testing::Test {
protected:
    std::filesystem::path dir = std::filesystem::temp_directory_path() / "powergan_io_test";
    void SetUp() override { std::filesystem::remove_all(dir); }
    void TearDown() override { std::filesystem::remove_all(dir); }
};

TEST_F(IoTest, Pgw1RoundTripIsBitExact) {
    Rng rng(2);
    std::vector<Window> ws;
    for (int i = 0; i < 3; ++i) {
        std::vector<float> s(33);
        for (auto& v : s) v = static_cast<float>(rng.normal());
        ws.push_back(window_of(Appliance::tumble_dryer, s));
    }
    write_pgw1(dir / "a.pgw1", ws);
    EXPECT_EQ(std::filesystem::file_size(dir / "a.pgw1"), 12u + 3 * 33 * 4);
    const auto back = read_pgw1(dir / "a.pgw1", Appliance::tumble_dryer, false);
    ASSERT_EQ(back.size(), 3u);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(back[i].samples, ws[i].samples);

    std::ifstream in(dir / "a.pgw1", std::ios::binary);
    char header[12];
    in.read(header, 12);
    EXPECT_EQ(std::string(header, 4), "PGW1");
    EXPECT_EQ(static_cast<unsigned char>(header[4]), 33);
    EXPECT_EQ(static_cast<unsigned char>(header[8]), 3);
}

TEST_F(IoTest, CsvRoundTripAndHeaderOnly) {
    std::vector<Window> ws = {window_of(Appliance::fridge, {0.1f, 1234.5678f, 3e-7f}),
                              window_of(Appliance::microwave, {5.0f, 6.0f, 7.0f})};
    write_windows_csv(dir / "w.csv", ws);
    const auto back = read_windows_csv(dir / "w.csv");
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].samples, ws[0].samples);
    EXPECT_EQ(back[1].label, Appliance::microwave);

    std::ifstream in(dir / "w.csv");
    int lines = 0;
    for (std::string l; std::getline(in, l);) ++lines;
    EXPECT_EQ(lines, 1 + 2 * 3);

    write_windows_csv(dir / "empty.csv", {});
    std::ifstream e(dir / "empty.csv");
    std::string header, extra;
    std::getline(e, header);
    EXPECT_EQ(header, "label,window_id,sample_index,power_w");
    EXPECT_FALSE(std::getline(e, extra));
}

TEST_F(IoTest, PreprocessDirectory) {
    std::filesystem::create_directories(dir / "in");
    {
        std::ofstream csv(dir / "in" / "house_1.csv");
        csv << "timestamp_unix_s,aggregate_w,Appliance1,Appliance2\n";
        for (int i = 0; i < 3000; ++i) {
            const bool fridge_on = (i / 150) % 4 == 0;
            const bool dw_on = i >= 1000 && i < 1200;
            csv << 1600000000 + 8 * i << ',' << 0 << ',' << (fridge_on ? 90 : 0) << ',' << (dw_on ? 2000 : 1) << '\n';
        }
    }
    {
        std::ofstream map(dir / "labels.json");
        map << R"({"Appliance1": "fridge", "Appliance2": "dishwasher"})";
    }
    PreprocessConfig cfg;
    cfg.window_length = 560;
    cfg.filter.energy_threshold_wh = 10;
    PreprocessReport report;
    const auto set = preprocess_directory(dir / "in", dir / "labels.json", cfg, &report);
    EXPECT_EQ(report.files_read, 1u);
    EXPECT_GT(report.windows_accepted[Appliance::fridge], 0u);
    EXPECT_EQ(report.windows_accepted[Appliance::dishwasher], 1u);
    EXPECT_EQ(set.windows.size(), 2u);
    EXPECT_DOUBLE_EQ(set.manifest.scale(Appliance::dishwasher), 2000.0);

    write_dataset(dir / "out", set);
    const auto ds = read_dataset(dir / "out");
    ASSERT_TRUE(ds.manifest.has_value());
    EXPECT_EQ(ds.windows.size(), 2u);
    const auto watts = read_dataset_watts(dir / "out");
    EXPECT_FLOAT_EQ(*std::max_element(watts[1].samples.begin(), watts[1].samples.end()), 2000.0f);
}

}  // namespace
}  // namespace powergan::data

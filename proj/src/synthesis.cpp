#include "powergan/synthesis.hpp"

#include <algorithm>
#include <map>

#include "powergan/errors.hpp"
#include "powergan/nets.hpp"
#include "powergan/window_io.hpp"

namespace powergan::synth {

namespace {

constexpr std::size_t kDrawBatch = 32;

// Samples come out at 8 s per step only at the final stage; lower stages
// cover the same time span with fewer, longer steps.
double effective_period(const train::GeneratorBundle& b) {
    const auto& net = b.config.net;
    return b.manifest.sample_period_s * static_cast<double>(net.window_length) /
           static_cast<double>(net.stage_length(b.stage));
}

std::vector<data::Window> draw(const train::GeneratorBundle& b, data::Appliance label, std::size_t count, Rng& rng) {
    const int cls = b.manifest.class_index(label);
    const auto scale = static_cast<float>(b.manifest.scale(label));
    ad::Tensor<float> z({static_cast<std::int64_t>(count), b.config.net.latent_dim});
    for (auto& v : z.data) v = static_cast<float>(rng.normal());
    const std::vector<int> labels(count, cls);
    ad::NoGradGuard off;
    const auto out = b.generator->forward(z, labels, 1.0).value();
    const auto L = static_cast<std::size_t>(out.dim(2));
    std::vector<data::Window> windows(count);
    for (std::size_t i = 0; i < count; ++i) {
        windows[i].label = label;
        windows[i].samples.resize(L);
        for (std::size_t t = 0; t < L; ++t) windows[i].samples[t] = std::max(0.0f, out.data[i * L + t]) * scale;
    }
    return windows;
}

}  // namespace

std::vector<data::Window> generate_unfiltered(const train::GeneratorBundle& bundle, data::Appliance label,
                                              std::size_t count, Rng& rng) {
    return draw(bundle, label, count, rng);
}

std::vector<data::Window> generate(const train::GeneratorBundle& bundle, const GenerationRequest& request,
                                   GenerationStats* stats) {
    if (request.count < 1) throw Error(ErrorCode::InvalidConfig, "count must be at least 1");
    if (!bundle.manifest.scales.contains(request.label))
        throw Error(ErrorCode::InvalidLabel,
                    "checkpoint was not trained on " + std::string(data::to_string(request.label)));
    GenerationStats local;
    GenerationStats& s = stats ? *stats : local;
    if (bundle.stage < bundle.config.net.num_blocks)
        s.warnings.push_back("checkpoint is at stage " + std::to_string(bundle.stage) + " of " +
                             std::to_string(bundle.config.net.num_blocks) + "; windows have " +
                             std::to_string(bundle.config.net.stage_length(bundle.stage)) + " samples");
    const double period = effective_period(bundle);
    Rng rng(Rng::derive(request.seed, "generate", {static_cast<std::uint64_t>(request.label)}));

    std::vector<data::Window> accepted;
    std::size_t streak = 0;
    while (accepted.size() < request.count) {
        for (auto& w : draw(bundle, request.label, kDrawBatch, rng)) {
            if (accepted.size() == request.count) break;
            ++s.drawn;
            const double energy =
                data::window_energy_above_steady(w.samples, period, request.filter.steady_state_std_factor);
            if (energy >= request.filter.energy_threshold_wh) {
                ++s.accepted;
                streak = 0;
                accepted.push_back(std::move(w));
                continue;
            }
            ++s.rejected;
            if (++streak > request.max_rejections_per_sample)
                throw Error(ErrorCode::GenerationStarved,
                            std::to_string(streak) + " consecutive rejections for " +
                                std::string(data::to_string(request.label)) + " after " +
                                std::to_string(s.accepted) + " accepted of " + std::to_string(s.drawn) +
                                " drawn (acceptance rate " +
                                std::to_string(static_cast<double>(s.accepted) / static_cast<double>(s.drawn)) + ")");
        }
    }
    return accepted;
}

ExportFormat export_format_from_string(const std::string& name) {
    if (name == "csv") return ExportFormat::csv;
    if (name == "pgw1") return ExportFormat::pgw1;
    throw Error(ErrorCode::InvalidConfig, "unknown export format '" + name + "' (expected csv or pgw1)");
}

void export_windows(std::span<const data::Window> windows, const std::filesystem::path& path, ExportFormat format) {
    if (format == ExportFormat::csv) {
        data::write_windows_csv(path, windows);
        return;
    }
    std::map<data::Appliance, std::vector<data::Window>> by_label;
    for (const auto& w : windows) by_label[w.label].push_back(w);
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create " + path.string() + ": " + ec.message());
    for (const auto& [label, group] : by_label)
        data::write_pgw1(path / (std::string(data::to_string(label)) + ".pgw1"), group);
}

}  // namespace powergan::synth

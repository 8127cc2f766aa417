#include "powergan/window_io.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "powergan/errors.hpp"

namespace powergan::data {

namespace {

constexpr std::array<char, 4> kMagic = {'P', 'G', 'W', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
    const std::array<unsigned char, 4> b = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                            static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b.data()), 4);
}

std::uint32_t get_u32(std::istream& is) {
    std::array<unsigned char, 4> b{};
    is.read(reinterpret_cast<char*>(b.data()), 4);
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream os(path, mode | std::ios::trunc);
    if (!os) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    return os;
}

}  // namespace

void write_pgw1(const std::filesystem::path& path, std::span<const Window> windows) {
    const std::uint32_t length = windows.empty() ? 0 : static_cast<std::uint32_t>(windows.front().samples.size());
    auto os = open_out(path, std::ios::binary);
    os.write(kMagic.data(), 4);
    put_u32(os, length);
    put_u32(os, static_cast<std::uint32_t>(windows.size()));
    for (const auto& w : windows) {
        if (w.samples.size() != length) throw Error(ErrorCode::InvalidShape, "windows of differing length in " + path.string());
        for (float v : w.samples) put_u32(os, std::bit_cast<std::uint32_t>(v));
    }
    if (!os) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

std::vector<Window> read_pgw1(const std::filesystem::path& path, Appliance label, bool normalized) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::array<char, 4> magic{};
    is.read(magic.data(), 4);
    if (!is || magic != kMagic) throw Error(ErrorCode::IoError, path.string() + " is not a PGW1 file");
    const std::uint32_t length = get_u32(is);
    const std::uint32_t count = get_u32(is);
    std::vector<Window> out(count);
    for (auto& w : out) {
        w.label = label;
        w.normalized = normalized;
        w.samples.resize(length);
        for (auto& v : w.samples) v = std::bit_cast<float>(get_u32(is));
    }
    if (!is) throw Error(ErrorCode::IoError, path.string() + " is truncated");
    return out;
}

nlohmann::json manifest_to_json(const NormalizationManifest& m) {
    nlohmann::json scales = nlohmann::json::object();
    nlohmann::json labels = nlohmann::json::array();
    for (const auto& [label, s] : m.scales) {
        scales[std::string(to_string(label))] = s;
        labels.push_back(std::string(to_string(label)));
    }
    return {{"scales", scales}, {"labels", labels}, {"window_length", m.window_length}, {"sample_period_s", m.sample_period_s}};
}

NormalizationManifest manifest_from_json(const nlohmann::json& j) {
    NormalizationManifest m;
    try {
        for (const auto& [name, s] : j.at("scales").items()) {
            const double v = s.get<double>();
            if (!(v > 0)) throw Error(ErrorCode::InvalidConfig, "non-positive scale for " + name);
            m.scales[appliance_from_string(name)] = v;
        }
        m.window_length = j.at("window_length").get<std::size_t>();
        m.sample_period_s = j.value("sample_period_s", kSamplePeriodSeconds);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("malformed manifest: ") + e.what());
    }
    return m;
}

void write_manifest(const std::filesystem::path& path, const NormalizationManifest& m) {
    auto os = open_out(path);
    os << manifest_to_json(m).dump(2) << '\n';
}

NormalizationManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
    }
    return manifest_from_json(j);
}

void write_dataset(const std::filesystem::path& dir, const BalancedSet& set) {
    std::map<Appliance, std::vector<Window>> by_label;
    for (const auto& [label, s] : set.manifest.scales) by_label[label];
    for (const auto& w : set.windows) by_label[w.label].push_back(w);
    for (const auto& [label, windows] : by_label)
        write_pgw1(dir / (std::string(to_string(label)) + ".pgw1"), windows);
    write_manifest(dir / "manifest.json", set.manifest);
}

Dataset read_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    const auto manifest_path = dir / "manifest.json";
    if (std::filesystem::exists(manifest_path)) ds.manifest = read_manifest(manifest_path);
    for (Appliance a : kAllAppliances) {
        const auto path = dir / (std::string(to_string(a)) + ".pgw1");
        if (!std::filesystem::exists(path)) continue;
        auto windows = read_pgw1(path, a, ds.manifest.has_value());
        for (auto& w : windows) ds.windows.push_back(std::move(w));
    }
    return ds;
}

std::vector<Window> read_dataset_watts(const std::filesystem::path& dir) {
    auto ds = read_dataset(dir);
    if (ds.manifest) {
        for (auto& w : ds.windows) {
            const auto s = static_cast<float>(ds.manifest->scale(w.label));
            for (float& v : w.samples) v *= s;
            w.normalized = false;
        }
    }
    return std::move(ds.windows);
}

void write_windows_csv(const std::filesystem::path& path, std::span<const Window> windows) {
    auto os = open_out(path);
    os << "label,window_id,sample_index,power_w\n";
    char buf[32];
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const std::string label(to_string(windows[w].label));
        for (std::size_t i = 0; i < windows[w].samples.size(); ++i) {
            // Shortest representation that round-trips the float exactly.
            auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), windows[w].samples[i]);
            os << label << ',' << w << ',' << i << ',' << std::string_view(buf, static_cast<std::size_t>(end - buf)) << '\n';
        }
    }
    if (!os) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

std::vector<Window> read_windows_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::string line;
    std::getline(is, line);
    std::vector<Window> out;
    std::map<std::size_t, std::size_t> slot;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string label, id, index, value;
        std::getline(ss, label, ',');
        std::getline(ss, id, ',');
        std::getline(ss, index, ',');
        std::getline(ss, value, ',');
        const std::size_t wid = std::stoul(id);
        auto it = slot.find(wid);
        if (it == slot.end()) {
            it = slot.emplace(wid, out.size()).first;
            out.push_back(Window{appliance_from_string(label), {}, false});
        }
        float v = 0;
        std::from_chars(value.data(), value.data() + value.size(), v);
        auto& samples = out[it->second].samples;
        const std::size_t i = std::stoul(index);
        if (samples.size() <= i) samples.resize(i + 1);
        samples[i] = v;
    }
    return out;
}

}  // namespace powergan::data

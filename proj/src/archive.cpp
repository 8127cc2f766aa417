#include "powergan/archive.hpp"

#include <array>
#include <bit>
#include <fstream>

#include "powergan/errors.hpp"

namespace powergan {

namespace {

constexpr std::array<char, 4> kMagic = {'P', 'G', 'A', '1'};

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

}  // namespace

void write_archive(const std::filesystem::path& path, const Archive& archive) {
    nlohmann::json header;
    header["tensors"] = nlohmann::json::array();
    for (const auto& [name, t] : archive.tensors) header["tensors"].push_back({{"name", name}, {"shape", t.shape}});
    header["meta"] = archive.meta;
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    os.write(kMagic.data(), 4);
    put_u32(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : archive.tensors)
        for (float v : t.data) put_u32(os, std::bit_cast<std::uint32_t>(v));
    if (!os) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::array<char, 4> magic{};
    is.read(magic.data(), 4);
    if (!is || magic != kMagic) throw Error(ErrorCode::IoError, path.string() + " is not a PGA1 archive");
    std::string text(get_u32(is), '\0');
    is.read(text.data(), static_cast<std::streamsize>(text.size()));
    Archive archive;
    try {
        const auto header = nlohmann::json::parse(text);
        archive.meta = header.at("meta");
        for (const auto& entry : header.at("tensors")) {
            ad::Tensor<float> t(entry.at("shape").get<ad::Shape>());
            for (auto& v : t.data) v = std::bit_cast<float>(get_u32(is));
            archive.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::IoError, path.string() + ": malformed header: " + e.what());
    }
    if (!is) throw Error(ErrorCode::IoError, path.string() + " is truncated");
    return archive;
}

template <class T>
Archive archive_parameters(const nets::Module<T>& module) {
    Archive a;
    for (const auto& [name, p] : module.named_parameters()) a.tensors.emplace(name, ad::cast<float>(p.value()));
    return a;
}

template <class T>
void load_parameters(nets::Module<T>& module, const Archive& archive) {
    for (const auto& name : module.parameter_names()) {
        auto it = archive.tensors.find(name);
        if (it == archive.tensors.end()) throw Error(ErrorCode::IncompatibleCheckpoint, "archive lacks " + name);
        module.assign(name, ad::cast<T>(it->second));
    }
}

template Archive archive_parameters<float>(const nets::Module<float>&);
template Archive archive_parameters<double>(const nets::Module<double>&);
template void load_parameters<float>(nets::Module<float>&, const Archive&);
template void load_parameters<double>(nets::Module<double>&, const Archive&);

}  // namespace powergan

#pragma once

// PGA1 parameter archive: named float32 tensors with a JSON header.
//
//   "PGA1" | u32 header_bytes | header JSON | f32 data, little-endian
//
// The header is {"tensors": [{"name", "shape"}...], "meta": {...}}; tensor
// data follows in header order.

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "powergan/autograd.hpp"
#include "powergan/nets.hpp"

namespace powergan {

struct Archive {
    std::map<std::string, ad::Tensor<float>> tensors;
    nlohmann::json meta = nlohmann::json::object();
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
// Throws Error(IoError) on missing or malformed files.
Archive read_archive(const std::filesystem::path& path);

template <class T>
Archive archive_parameters(const nets::Module<T>& module);
// Every module parameter must be present with a matching shape; throws Error(IncompatibleCheckpoint).
template <class T>
void load_parameters(nets::Module<T>& module, const Archive& archive);

}  // namespace powergan

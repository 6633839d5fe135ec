#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "lrod/tensor.hpp"

namespace lrod {

/// `.tns` format: one JSON header line containing at least {"shape": [...]},
/// followed by the row-major data as little-endian IEEE-754 doubles.
/// Extra header keys (checkpoint layout, mode tag) are preserved.
void write_tns(const std::filesystem::path& path, const Tensor& t, const nlohmann::json& extra = nlohmann::json::object());

struct TnsFile {
    Tensor tensor;
    nlohmann::json header;
};
TnsFile read_tns_with_header(const std::filesystem::path& path);
Tensor read_tns(const std::filesystem::path& path);

/// In-memory encoding, identical bytes to the file form.
std::string encode_tns(const Tensor& t, const nlohmann::json& extra = nlohmann::json::object());
TnsFile decode_tns(const std::string& bytes);

}  // namespace lrod

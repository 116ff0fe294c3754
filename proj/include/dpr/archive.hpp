#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace dpr {

/// Single-file container used for checkpoints and demo sets.
///
///   bytes 0..7   magic "DPRARCH1"
///   bytes 8..15  little-endian u64 header length L
///   bytes 16..   L bytes of UTF-8 JSON header
///   then         concatenated raw blob payloads
///
/// Header: {"schema_version": 1, "meta": {...},
///          "index": [{"name", "dtype": "f32"|"u8", "shape": [...], "offset", "nbytes"}, ...]}
/// Offsets are relative to the start of the payload; f32 payloads are little-endian.
struct Blob {
    std::string name;
    std::string dtype;  // "f32" or "u8"
    std::vector<std::int64_t> shape;
    std::vector<std::uint8_t> bytes;

    std::int64_t numel() const;
};

struct Archive {
    static constexpr int kSchemaVersion = 1;

    nlohmann::json meta = nlohmann::json::object();
    std::vector<Blob> blobs;

    const Blob* find(const std::string& name) const;
    const Blob& at(const std::string& name) const;

    void put_tensor(const std::string& name, const torch::Tensor& t);
    torch::Tensor tensor(const std::string& name) const;
    void put_bytes(const std::string& name, std::vector<std::int64_t> shape, std::vector<std::uint8_t> bytes);
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

/// Stores every named parameter and buffer of `module` under `prefix`.
void save_module(Archive& archive, const std::string& prefix, const torch::nn::Module& module);
/// Copies tensors stored under `prefix` into `module`; every parameter/buffer must be present
/// with a matching shape.
void load_module(const Archive& archive, const std::string& prefix, torch::nn::Module& module);
/// Whether the archive holds any tensor under `prefix`.
bool has_prefix(const Archive& archive, const std::string& prefix);

}  // namespace dpr

#include "dpr/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "dpr/common.hpp"

namespace dpr {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'D', 'P', 'R', 'A', 'R', 'C', 'H', '1'};

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

std::size_t dtype_size(const std::string& dtype) {
    if (dtype == "f32") return 4;
    if (dtype == "u8") return 1;
    throw Error(ErrorKind::Schema, "unknown blob dtype '" + dtype + "'");
}

}  // namespace

std::int64_t Blob::numel() const {
    std::int64_t n = 1;
    for (auto s : shape) n *= s;
    return n;
}

const Blob* Archive::find(const std::string& name) const {
    for (const auto& b : blobs) {
        if (b.name == name) return &b;
    }
    return nullptr;
}

const Blob& Archive::at(const std::string& name) const {
    if (const auto* b = find(name)) return *b;
    throw Error(ErrorKind::Schema, "archive has no entry '" + name + "'");
}

void Archive::put_tensor(const std::string& name, const torch::Tensor& t) {
    const auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    Blob b;
    b.name = name;
    b.dtype = "f32";
    b.shape.assign(c.sizes().begin(), c.sizes().end());
    b.bytes.resize(static_cast<std::size_t>(c.numel()) * 4);
    std::memcpy(b.bytes.data(), c.data_ptr<float>(), b.bytes.size());
    blobs.push_back(std::move(b));
}

torch::Tensor Archive::tensor(const std::string& name) const {
    const Blob& b = at(name);
    if (b.dtype == "f32") {
        auto t = torch::empty(b.shape, torch::kFloat32);
        std::memcpy(t.data_ptr<float>(), b.bytes.data(), b.bytes.size());
        return t;
    }
    auto t = torch::empty(b.shape, torch::kUInt8);
    std::memcpy(t.data_ptr<std::uint8_t>(), b.bytes.data(), b.bytes.size());
    return t;
}

void Archive::put_bytes(const std::string& name, std::vector<std::int64_t> shape, std::vector<std::uint8_t> bytes) {
    Blob b{name, "u8", std::move(shape), std::move(bytes)};
    if (static_cast<std::size_t>(b.numel()) != b.bytes.size()) {
        throw Error(ErrorKind::ShapeMismatch, "blob '" + name + "' byte count does not match its shape");
    }
    blobs.push_back(std::move(b));
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
    json header;
    header["schema_version"] = Archive::kSchemaVersion;
    header["meta"] = archive.meta;
    header["index"] = json::array();
    std::uint64_t offset = 0;
    for (const auto& b : archive.blobs) {
        header["index"].push_back(
            {{"name", b.name}, {"dtype", b.dtype}, {"shape", b.shape}, {"offset", offset}, {"nbytes", b.bytes.size()}});
        offset += b.bytes.size();
    }
    const std::string text = header.dump();
    const std::uint64_t len = text.size();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write '" + path.string() + "'");
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& b : archive.blobs) {
        out.write(reinterpret_cast<const char*>(b.bytes.data()), static_cast<std::streamsize>(b.bytes.size()));
    }
    if (!out) throw Error(ErrorKind::Io, "short write to '" + path.string() + "'");
}

Archive read_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
    char magic[8];
    std::uint64_t len = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw Error(ErrorKind::Schema, "'" + path.string() + "' is not a DPR archive");
    }
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    json header;
    try {
        header = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Schema, "archive header: " + std::string(e.what()));
    }
    if (header.value("schema_version", 0) != Archive::kSchemaVersion) {
        throw Error(ErrorKind::Schema, "unsupported archive schema version");
    }
    const auto payload_start = in.tellg();

    Archive a;
    a.meta = header.at("meta");
    for (const auto& e : header.at("index")) {
        Blob b;
        b.name = e.at("name").get<std::string>();
        b.dtype = e.at("dtype").get<std::string>();
        b.shape = e.at("shape").get<std::vector<std::int64_t>>();
        const auto offset = e.at("offset").get<std::uint64_t>();
        const auto nbytes = e.at("nbytes").get<std::uint64_t>();
        if (static_cast<std::uint64_t>(b.numel()) * dtype_size(b.dtype) != nbytes) {
            throw Error(ErrorKind::Schema, "blob '" + b.name + "' size does not match its shape");
        }
        b.bytes.resize(nbytes);
        in.seekg(payload_start + static_cast<std::streamoff>(offset));
        in.read(reinterpret_cast<char*>(b.bytes.data()), static_cast<std::streamsize>(nbytes));
        if (!in) throw Error(ErrorKind::Io, "truncated archive '" + path.string() + "'");
        a.blobs.push_back(std::move(b));
    }
    return a;
}

void save_module(Archive& archive, const std::string& prefix, const torch::nn::Module& module) {
    for (const auto& item : module.named_parameters(true)) archive.put_tensor(prefix + item.key(), item.value());
    for (const auto& item : module.named_buffers(true)) archive.put_tensor(prefix + item.key(), item.value());
}

void load_module(const Archive& archive, const std::string& prefix, torch::nn::Module& module) {
    torch::NoGradGuard no_grad;
    auto assign = [&](const std::string& key, torch::Tensor& dst) {
        const auto src = archive.tensor(prefix + key);
        if (src.sizes() != dst.sizes()) {
            throw Error(ErrorKind::ShapeMismatch, "checkpoint tensor '" + prefix + key + "' has a different shape");
        }
        dst.copy_(src);
    };
    for (auto& item : module.named_parameters(true)) assign(item.key(), item.value());
    for (auto& item : module.named_buffers(true)) assign(item.key(), item.value());
}

bool has_prefix(const Archive& archive, const std::string& prefix) {
    for (const auto& b : archive.blobs) {
        if (b.name.rfind(prefix, 0) == 0) return true;
    }
    return false;
}

}  // namespace dpr

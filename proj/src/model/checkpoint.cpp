#include <cstring>
#include <fstream>
#include <sstream>

#include "lpal/model.hpp"

// Layout: "LPALCKPT" | u32 version | u32 header bytes | JSON header |
//         raw little-endian float32 data in header order | u64 FNV-1a of the data bytes.

namespace lpal {
namespace {

constexpr char kMagic[8] = {'L', 'P', 'A', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a_bytes(const char* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw CorruptCheckpoint("truncated checkpoint " + path);
    return v;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    nlohmann::json header;
    header["fingerprint"] = model.config().fingerprint();
    header["config"] = model.config();
    header["seed"] = model.seed();
    header["provenance"] = to_string(model.provenance());
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& p : model.parameters()) tensors.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"unit", p.unit}});
    header["tensors"] = tensors;
    const std::string hdr = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
    os.write(kMagic, sizeof kMagic);
    write_pod<std::uint32_t>(os, kVersion);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(hdr.size()));
    os.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : model.parameters()) {
        const char* bytes = reinterpret_cast<const char*>(p.value.ptr());
        const std::size_t n = p.value.size() * sizeof(float);
        os.write(bytes, static_cast<std::streamsize>(n));
        h = fnv1a_bytes(bytes, n, h);
    }
    write_pod<std::uint64_t>(os, h);
    if (!os) throw CheckpointError("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path, const ModelConfig& config) {
    const std::string where = path.string();
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint " + where);
    char magic[sizeof kMagic];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw CorruptCheckpoint("bad magic in " + where);
    }
    if (read_pod<std::uint32_t>(is, where) != kVersion) throw CorruptCheckpoint("unsupported checkpoint version in " + where);
    const auto hdr_len = read_pod<std::uint32_t>(is, where);
    if (hdr_len > (1u << 24)) throw CorruptCheckpoint("implausible header length in " + where);
    std::string hdr(hdr_len, '\0');
    if (!is.read(hdr.data(), hdr_len)) throw CorruptCheckpoint("truncated header in " + where);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hdr);
    } catch (const nlohmann::json::exception& e) {
        throw CorruptCheckpoint("unparseable header in " + where + ": " + e.what());
    }
    const std::string expected = config.fingerprint();
    const std::string stored = header.value("fingerprint", "");
    if (stored != expected) {
        throw FingerprintMismatch("checkpoint " + where + " has fingerprint " + stored + " but the run expects " + expected);
    }

    Model m = Model::build(config, header.value("seed", std::uint64_t{0}));
    try {
        m.seed_ = header.at("seed").get<std::uint64_t>();
        m.provenance_ = provenance_from_string(header.at("provenance").get<std::string>());
    } catch (const std::exception& e) {
        throw CorruptCheckpoint("bad metadata in " + where + ": " + e.what());
    }
    const auto& tensors = header.at("tensors");
    if (tensors.size() != m.params_.size()) throw CorruptCheckpoint("tensor count mismatch in " + where);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < m.params_.size(); ++i) {
        Parameter& p = m.params_[i];
        if (tensors[i].at("name").get<std::string>() != p.name || tensors[i].at("shape").get<Shape>() != p.value.shape()) {
            throw CorruptCheckpoint("tensor table disagrees with the architecture in " + where);
        }
        char* bytes = reinterpret_cast<char*>(p.value.ptr());
        const std::size_t n = p.value.size() * sizeof(float);
        if (!is.read(bytes, static_cast<std::streamsize>(n))) throw CorruptCheckpoint("truncated tensor data in " + where);
        h = fnv1a_bytes(bytes, n, h);
    }
    if (read_pod<std::uint64_t>(is, where) != h) throw CorruptCheckpoint("checksum mismatch in " + where);
    return m;
}

}  // namespace lpal

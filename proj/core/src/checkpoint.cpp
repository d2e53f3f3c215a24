#include "smskd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "smskd/errors.hpp"
#include "smskd/hashing.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; this build targets LE hosts");

namespace smskd {

namespace {

constexpr char kMagic[4] = {'S', 'M', 'S', 'K'};
constexpr uint32_t kVersion = 1;

void put_u32(std::vector<unsigned char>& buf, uint32_t v) {
    const size_t at = buf.size();
    buf.resize(at + 4);
    std::memcpy(buf.data() + at, &v, 4);
}

uint32_t take_u32(const std::vector<unsigned char>& buf, size_t& at) {
    if (at + 4 > buf.size()) {
        throw IntegrityError("checkpoint: truncated while reading u32");
    }
    uint32_t v;
    std::memcpy(&v, buf.data() + at, 4);
    at += 4;
    return v;
}

uint8_t take_u8(const std::vector<unsigned char>& buf, size_t& at) {
    if (at + 1 > buf.size()) {
        throw IntegrityError("checkpoint: truncated while reading u8");
    }
    return buf[at++];
}

}  // namespace

void write_checkpoint(const std::vector<CheckpointEntry>& entries, const std::string& path) {
    std::vector<unsigned char> buf;
    buf.insert(buf.end(), kMagic, kMagic + 4);
    put_u32(buf, kVersion);
    put_u32(buf, static_cast<uint32_t>(entries.size()));
    for (const CheckpointEntry& e : entries) {
        put_u32(buf, static_cast<uint32_t>(e.name.size()));
        buf.insert(buf.end(), e.name.begin(), e.name.end());
        buf.push_back(static_cast<unsigned char>(e.shape.size()));
        for (int64_t d : e.shape) {
            put_u32(buf, static_cast<uint32_t>(d));
        }
        buf.push_back(e.dtype);
        buf.insert(buf.end(), e.bytes.begin(), e.bytes.end());
    }
    put_u32(buf, crc32_bytes(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataFormatError("checkpoint: cannot open '" + path + "' for writing");
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) {
        throw DataFormatError("checkpoint: short write to '" + path + "'");
    }
}

std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) {
        throw DataFormatError("checkpoint: cannot open '" + path + "'");
    }
    const std::streamsize size = in.tellg();
    in.seekg(0);
    std::vector<unsigned char> buf(static_cast<size_t>(size));
    in.read(reinterpret_cast<char*>(buf.data()), size);
    if (!in) {
        throw DataFormatError("checkpoint: short read from '" + path + "'");
    }
    if (buf.size() < 16 || std::memcmp(buf.data(), kMagic, 4) != 0) {
        throw IntegrityError("checkpoint: bad magic in '" + path + "'");
    }
    const size_t body = buf.size() - 4;
    uint32_t stored_crc;
    std::memcpy(&stored_crc, buf.data() + body, 4);
    if (stored_crc != crc32_bytes(buf.data(), body)) {
        throw IntegrityError("checkpoint: CRC mismatch in '" + path + "'");
    }

    size_t at = 4;
    const uint32_t version = take_u32(buf, at);
    if (version != kVersion) {
        throw IntegrityError("checkpoint: unsupported version " + std::to_string(version));
    }
    const uint32_t count = take_u32(buf, at);
    std::vector<CheckpointEntry> entries;
    entries.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        const uint32_t name_len = take_u32(buf, at);
        if (at + name_len > body) {
            throw IntegrityError("checkpoint: truncated name in '" + path + "'");
        }
        e.name.assign(reinterpret_cast<const char*>(buf.data() + at), name_len);
        at += name_len;
        const uint8_t rank = take_u8(buf, at);
        for (uint8_t d = 0; d < rank; ++d) {
            e.shape.push_back(take_u32(buf, at));
        }
        e.dtype = take_u8(buf, at);
        if (e.dtype != kDtypeF32 && e.dtype != kDtypeF64) {
            throw IntegrityError("checkpoint: unknown dtype " + std::to_string(e.dtype) +
                                 " for tensor '" + e.name + "'");
        }
        const size_t elem = e.dtype == kDtypeF32 ? 4 : 8;
        const size_t nbytes = static_cast<size_t>(shape_numel(e.shape)) * elem;
        if (at + nbytes > body) {
            throw IntegrityError("checkpoint: truncated data for tensor '" + e.name + "'");
        }
        e.bytes.assign(buf.begin() + static_cast<std::ptrdiff_t>(at),
                       buf.begin() + static_cast<std::ptrdiff_t>(at + nbytes));
        at += nbytes;
        entries.push_back(std::move(e));
    }
    if (at != body) {
        throw IntegrityError("checkpoint: trailing bytes in '" + path + "'");
    }
    return entries;
}

void save_model_checkpoint(const Model<float>& model, const AuxHeads<float>* heads,
                           const std::string& path) {
    std::vector<CheckpointEntry> entries;
    for (const auto& [name, p] : model.parameters()) {
        entries.push_back(entry_from_tensor(name, p));
    }
    if (heads != nullptr) {
        AuxHeads<float> mutable_heads = *heads;  // parameters() is non-const
        for (auto& [name, p] : mutable_heads.parameters()) {
            entries.push_back(entry_from_tensor("aux." + name, p));
        }
    }
    write_checkpoint(entries, path);
}

namespace {

void fill_from_entry(const CheckpointEntry& e, const std::string& name, Tensor<float>& p) {
    if (e.dtype != kDtypeF32) {
        throw DimensionError("checkpoint: tensor '" + name + "' has dtype " +
                             std::to_string(e.dtype) + ", expected f32");
    }
    if (e.shape != p.shape()) {
        throw DimensionError("checkpoint: tensor '" + name + "' has shape " +
                             shape_str(e.shape) + ", model expects " + shape_str(p.shape()));
    }
    std::memcpy(p.values().data(), e.bytes.data(), e.bytes.size());
}

}  // namespace

void load_model_checkpoint(Model<float>& model, AuxHeads<float>* heads,
                           const std::string& path) {
    std::map<std::string, const CheckpointEntry*> by_name;
    const std::vector<CheckpointEntry> entries = read_checkpoint(path);
    for (const CheckpointEntry& e : entries) {
        by_name[e.name] = &e;
    }
    for (auto& [name, p] : model.parameters()) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw DimensionError("checkpoint: missing tensor '" + name + "' in '" + path + "'");
        }
        fill_from_entry(*it->second, name, p);
    }
    if (heads != nullptr) {
        for (auto& [name, p] : heads->parameters()) {
            auto it = by_name.find("aux." + name);
            if (it == by_name.end()) {
                throw DimensionError("checkpoint: missing tensor 'aux." + name + "' in '" +
                                     path + "'");
            }
            fill_from_entry(*it->second, "aux." + name, p);
        }
    }
}

}  // namespace smskd

#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>

#include "smskd/models.hpp"

namespace smskd {

inline uint32_t crc32_bytes(const void* data, size_t n, uint32_t running = 0) {
    return static_cast<uint32_t>(
        ::crc32(running, static_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

// CRC32 over parameter bytes in declaration order; the cheap identity used
// by the snapshot-isolation and determinism invariants.
template <typename T>
uint32_t parameter_checksum(const Model<T>& model) {
    uint32_t crc = 0;
    for (const auto& [name, p] : model.parameters()) {
        crc = crc32_bytes(name.data(), name.size(), crc);
        crc = crc32_bytes(p.values().data(), p.values().size() * sizeof(T), crc);
    }
    return crc;
}

}  // namespace smskd

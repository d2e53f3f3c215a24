#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <type_traits>
#include <vector>

#include "smskd/losses.hpp"
#include "smskd/models.hpp"
#include "smskd/tensor.hpp"

namespace smskd {

// On-disk tensor record. File layout: magic "SMSK", version u32 = 1, tensor
// count u32, then per tensor: name length u32, UTF-8 name, rank u8,
// dims u32 x rank, dtype u8 (0 = f32, 1 = f64), raw little-endian element
// bytes; the file ends with a CRC32 of all preceding bytes.
struct CheckpointEntry {
    std::string name;
    Shape shape;
    uint8_t dtype = 0;
    std::vector<unsigned char> bytes;
};

inline constexpr uint8_t kDtypeF32 = 0;
inline constexpr uint8_t kDtypeF64 = 1;

void write_checkpoint(const std::vector<CheckpointEntry>& entries, const std::string& path);
std::vector<CheckpointEntry> read_checkpoint(const std::string& path);

template <typename T>
CheckpointEntry entry_from_tensor(const std::string& name, const Tensor<T>& t) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    CheckpointEntry e;
    e.name = name;
    e.shape = t.shape();
    e.dtype = std::is_same_v<T, float> ? kDtypeF32 : kDtypeF64;
    e.bytes.resize(t.values().size() * sizeof(T));
    std::memcpy(e.bytes.data(), t.values().data(), e.bytes.size());
    return e;
}

// Saves the model's parameters, plus any auxiliary-head parameters under the
// "aux." prefix so they stay out of the predictive path on load.
void save_model_checkpoint(const Model<float>& model, const AuxHeads<float>* heads,
                           const std::string& path);

// Restores parameters byte-exactly; a mismatched architecture produces a
// shape error naming the offending tensor.
void load_model_checkpoint(Model<float>& model, AuxHeads<float>* heads, const std::string& path);

}  // namespace smskd

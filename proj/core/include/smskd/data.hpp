#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "smskd/tensor.hpp"

namespace smskd {

struct Dataset {
    Tensor<float> inputs;  // [N, ...]
    std::vector<int64_t> labels;
    int64_t num_classes = 0;
    std::string split_tag = "full";

    int64_t size() const { return inputs.defined() && inputs.rank() > 0 ? inputs.dim(0) : 0; }

    // Hash of input bytes, labels and split tag; correctness vectors carry it
    // so misaligned cross-model comparisons fail loudly.
    uint64_t fingerprint() const;

    void validate() const;
};

// K Gaussian clusters centered on scaled standard-basis vectors (simplex
// vertices); requires dim >= K.
Dataset gen_blobs(int64_t k, int64_t per_class, int64_t dim, double spread, uint64_t seed);

// K interleaved 2-D spiral arms with Gaussian noise; arms are disjoint at
// noise = 0.
Dataset gen_spirals(int64_t k, int64_t per_class, double noise, uint64_t seed);

// One procedural sinusoid-grating template per class (distinct orientation,
// frequency and phase) plus per-pixel uniform noise, clamped to [0,1].
// Shape [N, channels, side, side].
Dataset gen_patterned_images(int64_t k, int64_t per_class, int64_t channels, int64_t side,
                             double noise, uint64_t seed);

enum class CifarVariant { cifar10, cifar100 };

// CIFAR binary format: cifar10 records are 1 label byte + 3072 pixel bytes
// (R, G, B planes, row-major 32x32); cifar100 records carry a coarse byte
// then the fine label byte. Pixels are scaled to [0,1].
Dataset read_cifar_binary(const std::string& path, CifarVariant variant);

// Mirrors each spatial sample along width with probability 0.5.
Tensor<float> augment_flip(const Tensor<float>& batch, uint64_t seed);

// Zero-pad by `pad` pixels then crop back to the original extent at a
// seeded offset, per sample.
Tensor<float> augment_pad_crop(const Tensor<float>& batch, int64_t pad, uint64_t seed);

// Deterministic stratified split; train and test are disjoint and exhaustive
// and every class appears in the training split.
std::pair<Dataset, Dataset> split_train_test(const Dataset& full, double test_fraction,
                                             uint64_t seed);

struct FeatureStats {
    std::vector<float> mean;
    std::vector<float> stdev;
};

// Per-feature statistics over the training split; near-constant features get
// unit scale.
FeatureStats standardize_fit(const Dataset& train);
void standardize_apply(Dataset& ds, const FeatureStats& stats);

// Per-channel means of a [N,C,H,W] dataset, and their subtraction.
std::vector<float> channel_means(const Dataset& train);
void subtract_channel_means(Dataset& ds, const std::vector<float>& means);

}  // namespace smskd

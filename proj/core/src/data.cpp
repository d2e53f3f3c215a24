#include "smskd/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>

#include "smskd/errors.hpp"
#include "smskd/hashing.hpp"
#include "smskd/rng.hpp"

namespace smskd {

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_gen_args(int64_t k, int64_t per_class) {
    if (k < 1 || per_class < 1) {
        throw ParameterError("generator: class count and per-class count must be >= 1");
    }
}

}  // namespace

uint64_t Dataset::fingerprint() const {
    uint32_t a = crc32_bytes(inputs.values().data(), inputs.values().size() * sizeof(float));
    uint32_t b = crc32_bytes(labels.data(), labels.size() * sizeof(int64_t));
    b = crc32_bytes(split_tag.data(), split_tag.size(), b);
    return (static_cast<uint64_t>(a) << 32) | b;
}

void Dataset::validate() const {
    if (num_classes < 1) {
        throw ContractError("dataset: class count must be >= 1");
    }
    if (static_cast<int64_t>(labels.size()) != size()) {
        throw ContractError("dataset: " + std::to_string(labels.size()) + " labels for " +
                            std::to_string(size()) + " inputs");
    }
    for (int64_t y : labels) {
        if (y < 0 || y >= num_classes) {
            throw ContractError("dataset: label " + std::to_string(y) + " out of range [0, " +
                                std::to_string(num_classes) + ")");
        }
    }
}

Dataset gen_blobs(int64_t k, int64_t per_class, int64_t dim, double spread, uint64_t seed) {
    check_gen_args(k, per_class);
    if (dim < k) {
        throw ParameterError("gen_blobs: needs dim >= K to place simplex-vertex centers, got K=" +
                             std::to_string(k) + " dim=" + std::to_string(dim));
    }
    if (spread < 0) {
        throw ParameterError("gen_blobs: spread must be nonnegative");
    }
    const int64_t n = k * per_class;
    Dataset ds;
    ds.inputs = Tensor<float>::zeros({n, dim});
    ds.labels.resize(static_cast<size_t>(n));
    ds.num_classes = k;
    DetRng rng(seed);
    for (int64_t c = 0; c < k; ++c) {
        for (int64_t i = 0; i < per_class; ++i) {
            const int64_t row = c * per_class + i;
            ds.labels[static_cast<size_t>(row)] = c;
            for (int64_t d = 0; d < dim; ++d) {
                const double center = d == c ? 1.0 : 0.0;
                ds.inputs.values()[row * dim + d] =
                    static_cast<float>(center + spread * rng.gaussian());
            }
        }
    }
    return ds;
}

Dataset gen_spirals(int64_t k, int64_t per_class, double noise, uint64_t seed) {
    check_gen_args(k, per_class);
    if (noise < 0) {
        throw ParameterError("gen_spirals: noise must be nonnegative");
    }
    const int64_t n = k * per_class;
    Dataset ds;
    ds.inputs = Tensor<float>::zeros({n, 2});
    ds.labels.resize(static_cast<size_t>(n));
    ds.num_classes = k;
    DetRng rng(seed);
    for (int64_t c = 0; c < k; ++c) {
        for (int64_t i = 0; i < per_class; ++i) {
            const int64_t row = c * per_class + i;
            ds.labels[static_cast<size_t>(row)] = c;
            // t stays away from the origin so arms cannot meet there
            const double t =
                0.25 + 0.75 * (static_cast<double>(i) + 0.5) / static_cast<double>(per_class);
            const double theta = 2.0 * kPi * static_cast<double>(c) / static_cast<double>(k) +
                                 1.5 * kPi * t;
            ds.inputs.values()[row * 2 + 0] =
                static_cast<float>(t * std::cos(theta) + noise * rng.gaussian());
            ds.inputs.values()[row * 2 + 1] =
                static_cast<float>(t * std::sin(theta) + noise * rng.gaussian());
        }
    }
    return ds;
}

Dataset gen_patterned_images(int64_t k, int64_t per_class, int64_t channels, int64_t side,
                             double noise, uint64_t seed) {
    check_gen_args(k, per_class);
    if (channels < 1 || side < 1) {
        throw ParameterError("gen_patterned_images: channels and side must be >= 1");
    }
    if (noise < 0) {
        throw ParameterError("gen_patterned_images: noise must be nonnegative");
    }
    const int64_t n = k * per_class;
    Dataset ds;
    ds.inputs = Tensor<float>::zeros({n, channels, side, side});
    ds.labels.resize(static_cast<size_t>(n));
    ds.num_classes = k;
    DetRng rng(seed);
    const int64_t plane = side * side;
    for (int64_t c = 0; c < k; ++c) {
        // Distinct grating per class: orientation, frequency and phase.
        const double theta = kPi * static_cast<double>(c) / static_cast<double>(k);
        const double freq = 1.0 + 0.7 * static_cast<double>(c % 3);
        const double phase = 0.9 * static_cast<double>(c);
        for (int64_t i = 0; i < per_class; ++i) {
            const int64_t row = c * per_class + i;
            ds.labels[static_cast<size_t>(row)] = c;
            for (int64_t ch = 0; ch < channels; ++ch) {
                float* img = ds.inputs.values().data() + (row * channels + ch) * plane;
                for (int64_t y = 0; y < side; ++y) {
                    for (int64_t x = 0; x < side; ++x) {
                        const double u = static_cast<double>(x) / static_cast<double>(side);
                        const double v = static_cast<double>(y) / static_cast<double>(side);
                        const double s = u * std::cos(theta) + v * std::sin(theta);
                        double val = 0.5 + 0.5 * std::sin(2.0 * kPi * freq * s * 2.0 + phase +
                                                          0.5 * static_cast<double>(ch));
                        if (noise > 0) {
                            val += rng.uniform(-noise, noise);
                        }
                        img[y * side + x] = static_cast<float>(std::clamp(val, 0.0, 1.0));
                    }
                }
            }
        }
    }
    return ds;
}

Dataset read_cifar_binary(const std::string& path, CifarVariant variant) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) {
        throw DataFormatError("cifar: cannot open '" + path + "'");
    }
    const int64_t file_size = static_cast<int64_t>(in.tellg());
    in.seekg(0);
    const int64_t label_bytes = variant == CifarVariant::cifar10 ? 1 : 2;
    const int64_t record_size = label_bytes + 3 * 32 * 32;
    const int64_t num_classes = variant == CifarVariant::cifar10 ? 10 : 100;
    if (file_size % record_size != 0) {
        throw DataFormatError("cifar: file size " + std::to_string(file_size) +
                              " is not a multiple of the record size " +
                              std::to_string(record_size) + " in '" + path + "'");
    }
    const int64_t n = file_size / record_size;
    Dataset ds;
    ds.inputs = Tensor<float>::zeros({n, 3, 32, 32});
    ds.labels.resize(static_cast<size_t>(n));
    ds.num_classes = num_classes;
    std::vector<unsigned char> record(static_cast<size_t>(record_size));
    for (int64_t i = 0; i < n; ++i) {
        in.read(reinterpret_cast<char*>(record.data()), record_size);
        if (!in) {
            throw DataFormatError("cifar: short read at record " + std::to_string(i) + " of '" +
                                  path + "'");
        }
        const int64_t label = record[static_cast<size_t>(label_bytes - 1)];
        if (label >= num_classes) {
            throw DataFormatError("cifar: label byte " + std::to_string(label) + " >= " +
                                  std::to_string(num_classes) + " at record " +
                                  std::to_string(i) + " of '" + path + "'");
        }
        ds.labels[static_cast<size_t>(i)] = label;
        float* out = ds.inputs.values().data() + i * 3 * 32 * 32;
        for (int64_t b = 0; b < 3 * 32 * 32; ++b) {
            out[b] = static_cast<float>(record[static_cast<size_t>(label_bytes + b)]) / 255.0f;
        }
    }
    return ds;
}

Tensor<float> augment_flip(const Tensor<float>& batch, uint64_t seed) {
    if (batch.rank() != 4) {
        throw ContractError("augment_flip: needs spatial input [B,C,H,W], got " +
                            shape_str(batch.shape()));
    }
    const int64_t b = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    Tensor<float> out = Tensor<float>::from(batch.shape(), batch.values());
    DetRng rng(seed);
    for (int64_t i = 0; i < b; ++i) {
        if (rng.next_double() >= 0.5) {
            continue;
        }
        for (int64_t ch = 0; ch < c; ++ch) {
            float* plane = out.values().data() + (i * c + ch) * h * w;
            for (int64_t y = 0; y < h; ++y) {
                std::reverse(plane + y * w, plane + (y + 1) * w);
            }
        }
    }
    return out;
}

Tensor<float> augment_pad_crop(const Tensor<float>& batch, int64_t pad, uint64_t seed) {
    if (batch.rank() != 4) {
        throw ContractError("augment_pad_crop: needs spatial input [B,C,H,W], got " +
                            shape_str(batch.shape()));
    }
    if (pad < 0) {
        throw ParameterError("augment_pad_crop: pad must be nonnegative");
    }
    if (pad == 0) {
        return batch.detached_copy();
    }
    const int64_t b = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    Tensor<float> out = Tensor<float>::zeros(batch.shape());
    DetRng rng(seed);
    for (int64_t i = 0; i < b; ++i) {
        const int64_t oy = static_cast<int64_t>(rng.next_range(static_cast<uint64_t>(2 * pad + 1)));
        const int64_t ox = static_cast<int64_t>(rng.next_range(static_cast<uint64_t>(2 * pad + 1)));
        for (int64_t ch = 0; ch < c; ++ch) {
            const float* src = batch.values().data() + (i * c + ch) * h * w;
            float* dst = out.values().data() + (i * c + ch) * h * w;
            for (int64_t y = 0; y < h; ++y) {
                const int64_t sy = y + oy - pad;
                if (sy < 0 || sy >= h) {
                    continue;  // zero border
                }
                for (int64_t x = 0; x < w; ++x) {
                    const int64_t sx = x + ox - pad;
                    if (sx >= 0 && sx < w) {
                        dst[y * w + x] = src[sy * w + sx];
                    }
                }
            }
        }
    }
    return out;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& full, double test_fraction,
                                             uint64_t seed) {
    full.validate();
    if (!(test_fraction >= 0.0) || test_fraction >= 1.0) {
        throw ParameterError("split: test fraction must be in [0, 1)");
    }
    const int64_t n = full.size();
    std::vector<std::vector<int64_t>> by_class(static_cast<size_t>(full.num_classes));
    for (int64_t i = 0; i < n; ++i) {
        by_class[static_cast<size_t>(full.labels[static_cast<size_t>(i)])].push_back(i);
    }
    std::set<int64_t> test_idx;
    for (int64_t c = 0; c < full.num_classes; ++c) {
        auto& idx = by_class[static_cast<size_t>(c)];
        if (idx.empty()) {
            throw ContractError("split: class " + std::to_string(c) + " has no samples");
        }
        DetRng rng(DetRng::derive(seed, static_cast<uint64_t>(c)));
        shuffle(idx, rng);
        const int64_t take = static_cast<int64_t>(
            std::llround(test_fraction * static_cast<double>(idx.size())));
        if (take >= static_cast<int64_t>(idx.size())) {
            throw ParameterError("split: test fraction leaves class " + std::to_string(c) +
                                 " without training samples");
        }
        for (int64_t i = 0; i < take; ++i) {
            test_idx.insert(idx[static_cast<size_t>(i)]);
        }
    }
    const int64_t feat = n > 0 ? full.inputs.numel() / n : 0;
    auto build = [&](bool want_test, const char* tag) {
        Dataset ds;
        ds.num_classes = full.num_classes;
        ds.split_tag = tag;
        std::vector<int64_t> rows;
        for (int64_t i = 0; i < n; ++i) {
            if ((test_idx.count(i) != 0) == want_test) {
                rows.push_back(i);
            }
        }
        Shape shape = full.inputs.shape();
        shape[0] = static_cast<int64_t>(rows.size());
        ds.inputs = Tensor<float>::zeros(shape);
        ds.labels.resize(rows.size());
        for (size_t r = 0; r < rows.size(); ++r) {
            std::copy_n(full.inputs.values().begin() + rows[r] * feat, feat,
                        ds.inputs.values().begin() + static_cast<int64_t>(r) * feat);
            ds.labels[r] = full.labels[static_cast<size_t>(rows[r])];
        }
        return ds;
    };
    return {build(false, "train"), build(true, "test")};
}

FeatureStats standardize_fit(const Dataset& train) {
    const int64_t n = train.size();
    if (n == 0) {
        throw ContractError("standardize_fit: empty training split");
    }
    const int64_t feat = train.inputs.numel() / n;
    FeatureStats stats;
    stats.mean.assign(static_cast<size_t>(feat), 0.0f);
    stats.stdev.assign(static_cast<size_t>(feat), 0.0f);
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t f = 0; f < feat; ++f) {
            stats.mean[static_cast<size_t>(f)] += train.inputs.values()[i * feat + f];
        }
    }
    for (float& m : stats.mean) {
        m /= static_cast<float>(n);
    }
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t f = 0; f < feat; ++f) {
            const float d =
                train.inputs.values()[i * feat + f] - stats.mean[static_cast<size_t>(f)];
            stats.stdev[static_cast<size_t>(f)] += d * d;
        }
    }
    for (float& s : stats.stdev) {
        s = std::sqrt(s / static_cast<float>(n));
        if (s < 1e-6f) {
            s = 1.0f;
        }
    }
    return stats;
}

void standardize_apply(Dataset& ds, const FeatureStats& stats) {
    const int64_t n = ds.size();
    const int64_t feat = n > 0 ? ds.inputs.numel() / n : 0;
    if (feat != static_cast<int64_t>(stats.mean.size())) {
        throw DimensionError("standardize_apply: stats cover " +
                             std::to_string(stats.mean.size()) + " features, dataset has " +
                             std::to_string(feat));
    }
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t f = 0; f < feat; ++f) {
            float& v = ds.inputs.values()[i * feat + f];
            v = (v - stats.mean[static_cast<size_t>(f)]) / stats.stdev[static_cast<size_t>(f)];
        }
    }
}

std::vector<float> channel_means(const Dataset& train) {
    if (train.inputs.rank() != 4) {
        throw ContractError("channel_means: needs [N,C,H,W] inputs, got " +
                            shape_str(train.inputs.shape()));
    }
    const int64_t n = train.size(), c = train.inputs.dim(1);
    const int64_t plane = train.inputs.dim(2) * train.inputs.dim(3);
    std::vector<float> means(static_cast<size_t>(c), 0.0f);
    if (n == 0) {
        return means;
    }
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t ch = 0; ch < c; ++ch) {
            const float* p = train.inputs.values().data() + (i * c + ch) * plane;
            for (int64_t j = 0; j < plane; ++j) {
                means[static_cast<size_t>(ch)] += p[j];
            }
        }
    }
    for (float& m : means) {
        m /= static_cast<float>(n * plane);
    }
    return means;
}

void subtract_channel_means(Dataset& ds, const std::vector<float>& means) {
    if (ds.inputs.rank() != 4 || ds.inputs.dim(1) != static_cast<int64_t>(means.size())) {
        throw DimensionError("subtract_channel_means: " + std::to_string(means.size()) +
                             " channel means for inputs " + shape_str(ds.inputs.shape()));
    }
    const int64_t n = ds.size(), c = ds.inputs.dim(1);
    const int64_t plane = ds.inputs.dim(2) * ds.inputs.dim(3);
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t ch = 0; ch < c; ++ch) {
            float* p = ds.inputs.values().data() + (i * c + ch) * plane;
            for (int64_t j = 0; j < plane; ++j) {
                p[j] -= means[static_cast<size_t>(ch)];
            }
        }
    }
}

}  // namespace smskd

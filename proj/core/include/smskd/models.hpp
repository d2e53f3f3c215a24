#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "smskd/errors.hpp"
#include "smskd/ops.hpp"
#include "smskd/rng.hpp"
#include "smskd/tensor.hpp"

namespace smskd {

enum class LayerKind { linear, conv, relu, maxpool, flatten };

// Conv kernels are fixed at 3x3; `in`/`out` are units for linear layers and
// channels for conv layers.
struct LayerSpec {
    LayerKind kind;
    int64_t in = 0;
    int64_t out = 0;
    std::string tap_name;  // nonempty: activation is exposed to the loss suite
};

template <typename T>
struct ForwardResult {
    Tensor<T> logits;
    std::vector<Tensor<T>> taps;  // declaration order
};

// Layer stack with named feature taps. Parameters live in an ordered,
// name-keyed list so that serialization, checksums and the optimizer all walk
// them in one deterministic order.
template <typename T>
class Model {
  public:
    Model() = default;

    Model(std::vector<LayerSpec> layers, Shape input_shape, int64_t num_classes)
        : layers_(std::move(layers)),
          input_shape_(std::move(input_shape)),
          num_classes_(num_classes) {
        validate_and_collect();
    }

    const std::vector<LayerSpec>& layers() const { return layers_; }
    const Shape& input_shape() const { return input_shape_; }
    int64_t num_classes() const { return num_classes_; }
    const std::vector<std::string>& tap_names() const { return tap_names_; }

    // Tap shapes without the batch dimension; a pure function of the specs.
    const std::vector<Shape>& tap_feature_shapes() const { return tap_shapes_; }

    // Tap shapes for a given batch size; a pure function of the layer specs.
    std::vector<Shape> tap_shapes(int64_t batch) const {
        std::vector<Shape> out;
        for (const Shape& s : tap_shapes_) {
            Shape with_batch{batch};
            with_batch.insert(with_batch.end(), s.begin(), s.end());
            out.push_back(std::move(with_batch));
        }
        return out;
    }

    std::vector<std::pair<std::string, Tensor<T>>>& parameters() { return params_; }
    const std::vector<std::pair<std::string, Tensor<T>>>& parameters() const { return params_; }

    int64_t parameter_count() const {
        int64_t n = 0;
        for (const auto& [name, p] : params_) {
            n += p.numel();
        }
        return n;
    }

    void set_trainable(bool trainable) {
        for (auto& [name, p] : params_) {
            p.set_requires_grad(trainable);
        }
    }

    bool trainable() const { return !params_.empty() && params_.front().second.requires_grad(); }

    // Kaiming-uniform fan-in for weights, zero biases; fully determined by
    // the seed and the parameter order.
    void init_parameters(uint64_t seed) {
        DetRng rng(seed);
        for (auto& [name, p] : params_) {
            if (name.ends_with(".bias")) {
                for (T& v : p.values()) {
                    v = T(0);
                }
                continue;
            }
            int64_t fan_in = 0;
            if (p.rank() == 2) {
                fan_in = p.dim(1);
            } else {
                fan_in = p.dim(1) * p.dim(2) * p.dim(3);
            }
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            for (T& v : p.values()) {
                v = static_cast<T>(rng.uniform(-bound, bound));
            }
        }
    }

    ForwardResult<T> forward(GradTape<T>& tape, const Tensor<T>& x) const {
        Shape expected{x.dim(0)};
        expected.insert(expected.end(), input_shape_.begin(), input_shape_.end());
        if (x.shape() != expected) {
            throw DimensionError("forward: input shape " + shape_str(x.shape()) +
                                 " does not match model input " + shape_str(expected));
        }
        ForwardResult<T> result;
        Tensor<T> cur = x;
        size_t param_idx = 0;
        for (const LayerSpec& layer : layers_) {
            switch (layer.kind) {
                case LayerKind::linear: {
                    const Tensor<T>& w = params_[param_idx].second;
                    const Tensor<T>& b = params_[param_idx + 1].second;
                    param_idx += 2;
                    cur = add_axis(tape, matmul_nt(tape, cur, w), b, 1);
                    break;
                }
                case LayerKind::conv: {
                    const Tensor<T>& w = params_[param_idx].second;
                    const Tensor<T>& b = params_[param_idx + 1].second;
                    param_idx += 2;
                    cur = add_axis(tape, conv2d(tape, cur, w), b, 1);
                    break;
                }
                case LayerKind::relu:
                    cur = relu(tape, cur);
                    break;
                case LayerKind::maxpool:
                    cur = maxpool2x2(tape, cur);
                    break;
                case LayerKind::flatten: {
                    Shape flat{cur.dim(0), cur.numel() / cur.dim(0)};
                    cur = reshape(tape, cur, flat);
                    break;
                }
            }
            if (!layer.tap_name.empty()) {
                result.taps.push_back(cur);
            }
        }
        result.logits = cur;
        return result;
    }

    // Frozen deep copy: shares no storage with the source and tracks no
    // gradients, so later training of the source cannot touch it.
    Model snapshot() const {
        Model copy;
        copy.layers_ = layers_;
        copy.input_shape_ = input_shape_;
        copy.num_classes_ = num_classes_;
        copy.tap_names_ = tap_names_;
        copy.tap_shapes_ = tap_shapes_;
        for (const auto& [name, p] : params_) {
            copy.params_.emplace_back(name, p.detached_copy());
        }
        return copy;
    }

    template <typename U>
    Model<U> cast() const {
        Model<U> copy;
        copy.layers_ = layers_;
        copy.input_shape_ = input_shape_;
        copy.num_classes_ = num_classes_;
        copy.tap_names_ = tap_names_;
        copy.tap_shapes_ = tap_shapes_;
        for (const auto& [name, p] : params_) {
            copy.params_.emplace_back(name, cast_tensor<T, U>(p));
        }
        return copy;
    }

  private:
    template <typename U>
    friend class Model;

    void validate_and_collect() {
        std::set<std::string> seen_taps;
        Shape cur = input_shape_;
        int layer_idx = 0;
        for (const LayerSpec& layer : layers_) {
            const std::string prefix = "layer" + std::to_string(layer_idx);
            switch (layer.kind) {
                case LayerKind::linear: {
                    if (cur.size() != 1 || cur[0] != layer.in) {
                        throw DimensionError("build: linear layer " + std::to_string(layer_idx) +
                                             " expects [" + std::to_string(layer.in) +
                                             "], previous output is " + shape_str(cur));
                    }
                    params_.emplace_back(prefix + ".weight",
                                         Tensor<T>::zeros({layer.out, layer.in}, true));
                    params_.emplace_back(prefix + ".bias", Tensor<T>::zeros({layer.out}, true));
                    cur = {layer.out};
                    break;
                }
                case LayerKind::conv: {
                    if (cur.size() != 3 || cur[0] != layer.in) {
                        throw DimensionError("build: conv layer " + std::to_string(layer_idx) +
                                             " expects " + std::to_string(layer.in) +
                                             " channels, previous output is " + shape_str(cur));
                    }
                    params_.emplace_back(prefix + ".weight",
                                         Tensor<T>::zeros({layer.out, layer.in, 3, 3}, true));
                    params_.emplace_back(prefix + ".bias", Tensor<T>::zeros({layer.out}, true));
                    cur = {layer.out, cur[1], cur[2]};
                    break;
                }
                case LayerKind::relu:
                    break;
                case LayerKind::maxpool: {
                    if (cur.size() != 3) {
                        throw DimensionError("build: maxpool needs spatial input, got " +
                                             shape_str(cur));
                    }
                    if (cur[1] < 2 || cur[2] < 2 || cur[1] % 2 != 0 || cur[2] % 2 != 0) {
                        throw DimensionError("build: maxpool underflow at layer " +
                                             std::to_string(layer_idx) + ", spatial shape " +
                                             shape_str(cur));
                    }
                    cur = {cur[0], cur[1] / 2, cur[2] / 2};
                    break;
                }
                case LayerKind::flatten:
                    cur = {shape_numel(cur)};
                    break;
            }
            if (!layer.tap_name.empty()) {
                if (!seen_taps.insert(layer.tap_name).second) {
                    throw ContractError("build: duplicate tap name '" + layer.tap_name + "'");
                }
                tap_names_.push_back(layer.tap_name);
                tap_shapes_.push_back(cur);
            }
            ++layer_idx;
        }
        if (cur.size() != 1 || cur[0] != num_classes_) {
            throw DimensionError("build: final layer produces " + shape_str(cur) +
                                 ", expected [" + std::to_string(num_classes_) + "] logits");
        }
    }

    std::vector<LayerSpec> layers_;
    Shape input_shape_;
    int64_t num_classes_ = 0;
    std::vector<std::string> tap_names_;
    std::vector<Shape> tap_shapes_;  // without batch dimension
    std::vector<std::pair<std::string, Tensor<T>>> params_;
};

// linear->relu stack with a tap after each hidden relu; empty hidden list
// degenerates to logistic regression with zero taps.
template <typename T>
Model<T> build_mlp(int64_t input_dim, const std::vector<int64_t>& hidden_dims, int64_t k) {
    if (input_dim < 1 || k < 1) {
        throw ParameterError("build_mlp: dimensions must be >= 1");
    }
    std::vector<LayerSpec> layers;
    int64_t cur = input_dim;
    int tap = 0;
    for (int64_t h : hidden_dims) {
        if (h < 1) {
            throw ParameterError("build_mlp: hidden dims must be >= 1");
        }
        layers.push_back({LayerKind::linear, cur, h, ""});
        layers.push_back({LayerKind::relu, 0, 0, "h" + std::to_string(tap++)});
        cur = h;
    }
    layers.push_back({LayerKind::linear, cur, k, ""});
    return Model<T>(std::move(layers), {input_dim}, k);
}

// conv3x3 -> relu (tap, pre-pool) -> maxpool2x2 per entry, then flatten and a
// linear head. Taps keep the pre-pool spatial extent.
template <typename T>
Model<T> build_tinyconv(int64_t channels_in, int64_t height, int64_t width,
                        const std::vector<int64_t>& conv_channels, int64_t k) {
    if (height < 4 || width < 4) {
        throw ParameterError("build_tinyconv: spatial size must be >= 4");
    }
    if (channels_in < 1 || k < 1) {
        throw ParameterError("build_tinyconv: dimensions must be >= 1");
    }
    std::vector<LayerSpec> layers;
    int64_t cur_c = channels_in;
    int64_t cur_h = height;
    int64_t cur_w = width;
    int tap = 0;
    for (int64_t c : conv_channels) {
        layers.push_back({LayerKind::conv, cur_c, c, ""});
        layers.push_back({LayerKind::relu, 0, 0, "h" + std::to_string(tap++)});
        layers.push_back({LayerKind::maxpool, 0, 0, ""});
        cur_c = c;
        cur_h /= 2;
        cur_w /= 2;
    }
    layers.push_back({LayerKind::flatten, 0, 0, ""});
    layers.push_back({LayerKind::linear, cur_c * cur_h * cur_w, k, ""});
    return Model<T>(std::move(layers), {channels_in, height, width}, k);
}

}  // namespace smskd

#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "smskd/errors.hpp"

namespace smskd {

// Dimension sizes, outermost first. Rank 0 (empty shape) is a scalar.
using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out << ", ";
        }
        out << shape[i];
    }
    out << "]";
    return out.str();
}

template <typename T>
struct TensorStorage {
    Shape shape;
    std::vector<T> values;  // row-major
    std::vector<T> grad;    // same length as values when requires_grad
    bool requires_grad = false;
};

// Cheap-to-copy handle to shared storage. Values are written once by the op
// that creates the tensor; afterwards only grad accumulates.
template <typename T>
class Tensor {
  public:
    using value_type = T;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto s = std::make_shared<TensorStorage<T>>();
        s->values.assign(static_cast<size_t>(shape_numel(shape)), T(0));
        s->shape = std::move(shape);
        s->requires_grad = requires_grad;
        if (requires_grad) {
            s->grad.assign(s->values.size(), T(0));
        }
        return Tensor(std::move(s));
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (T& v : t.values()) {
            v = value;
        }
        return t;
    }

    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
        if (static_cast<int64_t>(values.size()) != shape_numel(shape)) {
            throw DimensionError("tensor data length " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape));
        }
        auto s = std::make_shared<TensorStorage<T>>();
        s->shape = std::move(shape);
        s->values = std::move(values);
        s->requires_grad = requires_grad;
        if (requires_grad) {
            s->grad.assign(s->values.size(), T(0));
        }
        return Tensor(std::move(s));
    }

    static Tensor scalar(T value) { return from({}, {value}); }

    bool defined() const { return s_ != nullptr; }

    const Shape& shape() const { return s_->shape; }
    int rank() const { return static_cast<int>(s_->shape.size()); }
    int64_t dim(int i) const { return s_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(s_->values.size()); }

    std::vector<T>& values() { return s_->values; }
    const std::vector<T>& values() const { return s_->values; }

    bool requires_grad() const { return s_ && s_->requires_grad; }

    std::vector<T>& grad() {
        require_grad_buffer();
        return s_->grad;
    }
    const std::vector<T>& grad() const {
        require_grad_buffer();
        return s_->grad;
    }

    void set_requires_grad(bool b) {
        s_->requires_grad = b;
        if (b) {
            s_->grad.assign(s_->values.size(), T(0));
        } else {
            s_->grad.clear();
        }
    }

    void zero_grad() {
        if (s_->requires_grad) {
            s_->grad.assign(s_->values.size(), T(0));
        }
    }

    T item() const {
        if (numel() != 1) {
            throw ContractError("item() requires a single-element tensor, got shape " +
                                shape_str(s_->shape));
        }
        return s_->values[0];
    }

    // Deep copy with no grad tracking; shares nothing with the source.
    Tensor detached_copy() const {
        auto s = std::make_shared<TensorStorage<T>>();
        s->shape = s_->shape;
        s->values = s_->values;
        s->requires_grad = false;
        return Tensor(std::move(s));
    }

    Tensor copy_with_grad() const {
        Tensor t = detached_copy();
        t.set_requires_grad(true);
        return t;
    }

    bool all_finite() const {
        for (T v : s_->values) {
            if (!std::isfinite(static_cast<double>(v))) {
                return false;
            }
        }
        return true;
    }

    // Storage identity, used to detect aliasing in tests.
    const void* storage_id() const { return s_.get(); }

  private:
    explicit Tensor(std::shared_ptr<TensorStorage<T>> s) : s_(std::move(s)) {}

    void require_grad_buffer() const {
        if (!s_->requires_grad) {
            throw ContractError("tensor does not track gradients (requires_grad is false)");
        }
    }

    std::shared_ptr<TensorStorage<T>> s_;
};

template <typename T, typename U>
Tensor<U> cast_tensor(const Tensor<T>& t) {
    std::vector<U> vals(t.values().begin(), t.values().end());
    return Tensor<U>::from(t.shape(), std::move(vals));
}

}  // namespace smskd

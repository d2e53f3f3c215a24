#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "smskd/autodiff.hpp"
#include "smskd/errors.hpp"
#include "smskd/tensor.hpp"

namespace smskd {

// Scalar-valued graph function of one tensor; rebuilt on a fresh tape per
// evaluation so finite differences see no stale state.
template <typename T>
using ScalarFn = std::function<Tensor<T>(GradTape<T>&, const Tensor<T>&)>;

// Compares the reverse-mode gradient of f at x against central finite
// differences. Returns max over coordinates of
// |g_ad - g_fd| / max(1, |g_ad|, |g_fd|). Meant for f64; finite differences
// are unreliable at f32.
template <typename T>
T check_gradient(const ScalarFn<T>& f, const Tensor<T>& x, T step) {
    Tensor<T> leaf = x.detached_copy();
    leaf.set_requires_grad(true);
    GradTape<T> tape;
    Tensor<T> loss = f(tape, leaf);
    if (loss.numel() != 1) {
        throw ContractError("check_gradient: f must return a scalar, got shape " +
                            shape_str(loss.shape()));
    }
    tape.backward(loss);
    const std::vector<T> g_ad = leaf.grad();

    T worst = T(0);
    for (int64_t i = 0; i < x.numel(); ++i) {
        Tensor<T> plus = x.detached_copy();
        plus.values()[i] += step;
        Tensor<T> minus = x.detached_copy();
        minus.values()[i] -= step;
        GradTape<T> scratch;
        const T fp = f(scratch, plus).item();
        GradTape<T> scratch2;
        const T fm = f(scratch2, minus).item();
        const T g_fd = (fp - fm) / (T(2) * step);
        const T g = g_ad[static_cast<size_t>(i)];
        const T denom = std::max(T(1), std::max(std::abs(g), std::abs(g_fd)));
        worst = std::max(worst, std::abs(g - g_fd) / denom);
    }
    return worst;
}

}  // namespace smskd

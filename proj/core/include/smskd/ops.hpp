#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "smskd/autodiff.hpp"
#include "smskd/errors.hpp"
#include "smskd/tensor.hpp"

// Primitive differentiable operations. Every op validates shapes up front,
// computes its forward result into a fresh tensor, and, when any input takes
// gradients, records a closure on the tape that accumulates into the inputs'
// grad buffers.

namespace smskd {

// Floor applied inside log/sqrt denominators and norm divisions, so that
// confident teachers (probabilities hitting 0 in f32) never produce infinities.
inline constexpr double kProbFloor = 1e-12;

namespace detail {

template <typename T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

template <typename T>
void check_rank(const char* op, const Tensor<T>& t, int rank) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                             ", got shape " + shape_str(t.shape()));
    }
}

// Decomposes flat indices of `shape` relative to `axis`:
// flat = (outer * shape[axis] + j) * inner + r.
inline void axis_extents(const Shape& shape, int axis, int64_t* outer, int64_t* inner) {
    int64_t o = 1;
    int64_t in = 1;
    for (int i = 0; i < axis; ++i) {
        o *= shape[static_cast<size_t>(i)];
    }
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) {
        in *= shape[i];
    }
    *outer = o;
    *inner = in;
}

template <typename T>
void check_axis_vector(const char* op, const Tensor<T>& x, const Tensor<T>& v, int axis) {
    if (axis < 0 || axis >= x.rank()) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                             " out of range for shape " + shape_str(x.shape()));
    }
    if (v.rank() != 1 || v.dim(0) != x.dim(axis)) {
        throw DimensionError(std::string(op) + ": vector shape " + shape_str(v.shape()) +
                             " does not match axis " + std::to_string(axis) + " of " +
                             shape_str(x.shape()));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(GradTape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape("add", a, b);
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor<T> out = Tensor<T>::zeros(a.shape(), rg);
    for (int64_t i = 0; i < a.numel(); ++i) {
        out.values()[i] = a.values()[i] + b.values()[i];
    }
    if (rg) {
        tape.record([a = a, b = b, out]() mutable {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                for (size_t i = 0; i < g.size(); ++i) {
                    a.grad()[i] += g[i];
                }
            }
            if (b.requires_grad()) {
                for (size_t i = 0; i < g.size(); ++i) {
                    b.grad()[i] += g[i];
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(GradTape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape("sub", a, b);
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor<T> out = Tensor<T>::zeros(a.shape(), rg);
    for (int64_t i = 0; i < a.numel(); ++i) {
        out.values()[i] = a.values()[i] - b.values()[i];
    }
    if (rg) {
        tape.record([a = a, b = b, out]() mutable {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                for (size_t i = 0; i < g.size(); ++i) {
                    a.grad()[i] += g[i];
                }
            }
            if (b.requires_grad()) {
                for (size_t i = 0; i < g.size(); ++i) {
                    b.grad()[i] -= g[i];
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(GradTape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape("mul", a, b);
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor<T> out = Tensor<T>::zeros(a.shape(), rg);
    for (int64_t i = 0; i < a.numel(); ++i) {
        out.values()[i] = a.values()[i] * b.values()[i];
    }
    if (rg) {
        tape.record([a = a, b = b, out]() mutable {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                for (size_t i = 0; i < g.size(); ++i) {
                    a.grad()[i] += g[i] * b.values()[i];
                }
            }
            if (b.requires_grad()) {
                for (size_t i = 0; i < g.size(); ++i) {
                    b.grad()[i] += g[i] * a.values()[i];
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> div(GradTape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape("div", a, b);
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor<T> out = Tensor<T>::zeros(a.shape(), rg);
    for (int64_t i = 0; i < a.numel(); ++i) {
        out.values()[i] = a.values()[i] / b.values()[i];
    }
    if (rg) {
        tape.record([a = a, b = b, out]() mutable {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                for (size_t i = 0; i < g.size(); ++i) {
                    a.grad()[i] += g[i] / b.values()[i];
                }
            }
            if (b.requires_grad()) {
                for (size_t i = 0; i < g.size(); ++i) {
                    const T bv = b.values()[i];
                    b.grad()[i] -= g[i] * a.values()[i] / (bv * bv);
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// axis-broadcast binary: v is rank-1 and indexed by x's `axis` coordinate
// ---------------------------------------------------------------------------

template <typename T, typename Fwd, typename BwdX, typename BwdV>
Tensor<T> axis_op(GradTape<T>& tape, const char* name, const Tensor<T>& x, const Tensor<T>& v,
                  int axis, Fwd fwd, BwdX bwd_x, BwdV bwd_v) {
    detail::check_axis_vector(name, x, v, axis);
    int64_t outer = 0;
    int64_t inner = 0;
    detail::axis_extents(x.shape(), axis, &outer, &inner);
    const int64_t da = x.dim(axis);
    const bool rg = x.requires_grad() || v.requires_grad();
    Tensor<T> out = Tensor<T>::zeros(x.shape(), rg);
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t j = 0; j < da; ++j) {
            const int64_t base = (o * da + j) * inner;
            for (int64_t r = 0; r < inner; ++r) {
                out.values()[base + r] = fwd(x.values()[base + r], v.values()[j]);
            }
        }
    }
    if (rg) {
        tape.record([x = x, v = v, out, outer, inner, da, bwd_x, bwd_v]() mutable {
            const auto& g = out.grad();
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t j = 0; j < da; ++j) {
                    const int64_t base = (o * da + j) * inner;
                    for (int64_t r = 0; r < inner; ++r) {
                        const int64_t i = base + r;
                        if (x.requires_grad()) {
                            x.grad()[i] += bwd_x(g[i], x.values()[i], v.values()[j]);
                        }
                        if (v.requires_grad()) {
                            v.grad()[j] += bwd_v(g[i], x.values()[i], v.values()[j]);
                        }
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add_axis(GradTape<T>& tape, const Tensor<T>& x, const Tensor<T>& v, int axis) {
    return axis_op(
        tape, "add_axis", x, v, axis, [](T a, T b) { return a + b; },
        [](T g, T, T) { return g; }, [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> mul_axis(GradTape<T>& tape, const Tensor<T>& x, const Tensor<T>& v, int axis) {
    return axis_op(
        tape, "mul_axis", x, v, axis, [](T a, T b) { return a * b; },
        [](T g, T, T b) { return g * b; }, [](T g, T a, T) { return g * a; });
}

template <typename T>
Tensor<T> div_axis(GradTape<T>& tape, const Tensor<T>& x, const Tensor<T>& v, int axis) {
    return axis_op(
        tape, "div_axis", x, v, axis, [](T a, T b) { return a / b; },
        [](T g, T, T b) { return g / b; }, [](T g, T a, T b) { return -g * a / (b * b); });
}

// ---------------------------------------------------------------------------
// elementwise unary
// ---------------------------------------------------------------------------

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_op(GradTape<T>& tape, const Tensor<T>& x, Fwd fwd, Bwd bwd) {
    const bool rg = x.requires_grad();
    Tensor<T> out = Tensor<T>::zeros(x.shape(), rg);
    for (int64_t i = 0; i < x.numel(); ++i) {
        out.values()[i] = fwd(x.values()[i]);
    }
    if (rg) {
        tape.record([x = x, out, bwd]() mutable {
            const auto& g = out.grad();
            for (size_t i = 0; i < g.size(); ++i) {
                x.grad()[i] += bwd(g[i], x.values()[i], out.values()[i]);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scalar_mul(GradTape<T>& tape, const Tensor<T>& x, T c) {
    return unary_op(
        tape, x, [c](T v) { return v * c; }, [c](T g, T, T) { return g * c; });
}

template <typename T>
Tensor<T> scalar_add(GradTape<T>& tape, const Tensor<T>& x, T c) {
    return unary_op(
        tape, x, [c](T v) { return v + c; }, [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> relu(GradTape<T>& tape, const Tensor<T>& x) {
    return unary_op(
        tape, x, [](T v) { return v > T(0) ? v : T(0); },
        [](T g, T v, T) { return v > T(0) ? g : T(0); });
}

template <typename T>
Tensor<T> square(GradTape<T>& tape, const Tensor<T>& x) {
    return unary_op(
        tape, x, [](T v) { return v * v; }, [](T g, T v, T) { return T(2) * v * g; });
}

template <typename T>
Tensor<T> sqrt(GradTape<T>& tape, const Tensor<T>& x) {
    return unary_op(
        tape, x, [](T v) { return std::sqrt(v); },
        [](T g, T, T o) { return g / (T(2) * std::max(o, T(kProbFloor))); });
}

// Natural log with the probability floor: log(max(x, 1e-12)).
template <typename T>
Tensor<T> log(GradTape<T>& tape, const Tensor<T>& x) {
    return unary_op(
        tape, x, [](T v) { return std::log(std::max(v, T(kProbFloor))); },
        [](T g, T v, T) { return g / std::max(v, T(kProbFloor)); });
}

template <typename T>
Tensor<T> exp(GradTape<T>& tape, const Tensor<T>& x) {
    return unary_op(
        tape, x, [](T v) { return std::exp(v); }, [](T g, T, T o) { return g * o; });
}

// |x|^p, used by attention maps; derivative p*|x|^(p-1)*sign(x).
template <typename T>
Tensor<T> abs_pow(GradTape<T>& tape, const Tensor<T>& x, T p) {
    if (!(p >= T(1))) {
        throw ParameterError("abs_pow: exponent must be >= 1, got " + std::to_string(p));
    }
    return unary_op(
        tape, x, [p](T v) { return std::pow(std::abs(v), p); },
        [p](T g, T v, T) {
            if (v == T(0)) {
                return T(0);
            }
            const T s = v > T(0) ? T(1) : T(-1);
            return g * p * std::pow(std::abs(v), p - T(1)) * s;
        });
}

template <typename T>
Tensor<T> clamp_min(GradTape<T>& tape, const Tensor<T>& x, T lo) {
    return unary_op(
        tape, x, [lo](T v) { return std::max(v, lo); },
        [lo](T g, T v, T) { return v > lo ? g : T(0); });
}

// Elementwise Huber with delta = 1.
template <typename T>
Tensor<T> huber1(GradTape<T>& tape, const Tensor<T>& x) {
    return unary_op(
        tape, x,
        [](T v) {
            const T a = std::abs(v);
            return a <= T(1) ? T(0.5) * v * v : a - T(0.5);
        },
        [](T g, T v, T) { return g * std::clamp(v, T(-1), T(1)); });
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(GradTape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_rank("matmul", a, 2);
    detail::check_rank("matmul", b, 2);
    if (a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor<T> out = Tensor<T>::zeros({m, n}, rg);
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t p = 0; p < k; ++p) {
            const T av = a.values()[i * k + p];
            for (int64_t j = 0; j < n; ++j) {
                out.values()[i * n + j] += av * b.values()[p * n + j];
            }
        }
    }
    if (rg) {
        tape.record([a = a, b = b, out, m, k, n]() mutable {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                for (int64_t i = 0; i < m; ++i) {
                    for (int64_t p = 0; p < k; ++p) {
                        T acc = T(0);
                        for (int64_t j = 0; j < n; ++j) {
                            acc += g[i * n + j] * b.values()[p * n + j];
                        }
                        a.grad()[i * k + p] += acc;
                    }
                }
            }
            if (b.requires_grad()) {
                for (int64_t p = 0; p < k; ++p) {
                    for (int64_t j = 0; j < n; ++j) {
                        T acc = T(0);
                        for (int64_t i = 0; i < m; ++i) {
                            acc += a.values()[i * k + p] * g[i * n + j];
                        }
                        b.grad()[p * n + j] += acc;
                    }
                }
            }
        });
    }
    return out;
}

// a [M,K] times b^T where b is [N,K]; the layout linear layers store.
template <typename T>
Tensor<T> matmul_nt(GradTape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_rank("matmul_nt", a, 2);
    detail::check_rank("matmul_nt", b, 2);
    if (a.dim(1) != b.dim(1)) {
        throw DimensionError("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor<T> out = Tensor<T>::zeros({m, n}, rg);
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            T acc = T(0);
            for (int64_t p = 0; p < k; ++p) {
                acc += a.values()[i * k + p] * b.values()[j * k + p];
            }
            out.values()[i * n + j] = acc;
        }
    }
    if (rg) {
        tape.record([a = a, b = b, out, m, k, n]() mutable {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                for (int64_t i = 0; i < m; ++i) {
                    for (int64_t j = 0; j < n; ++j) {
                        const T gv = g[i * n + j];
                        for (int64_t p = 0; p < k; ++p) {
                            a.grad()[i * k + p] += gv * b.values()[j * k + p];
                        }
                    }
                }
            }
            if (b.requires_grad()) {
                for (int64_t j = 0; j < n; ++j) {
                    for (int64_t i = 0; i < m; ++i) {
                        const T gv = g[i * n + j];
                        for (int64_t p = 0; p < k; ++p) {
                            b.grad()[j * k + p] += gv * a.values()[i * k + p];
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// convolution and pooling
// ---------------------------------------------------------------------------

// Stride-1 convolution with zero same-padding; output spatial size equals
// input spatial size. Kernel extents must be odd.
template <typename T>
Tensor<T> conv2d(GradTape<T>& tape, const Tensor<T>& x, const Tensor<T>& w) {
    detail::check_rank("conv2d input", x, 4);
    detail::check_rank("conv2d weight", w, 4);
    if (x.dim(1) != w.dim(1)) {
        throw DimensionError("conv2d: channel mismatch, input " + shape_str(x.shape()) +
                             " vs weight " + shape_str(w.shape()));
    }
    if (w.dim(2) % 2 == 0 || w.dim(3) % 2 == 0) {
        throw ParameterError("conv2d: kernel extents must be odd, got " + shape_str(w.shape()));
    }
    const int64_t bsz = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int64_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int64_t ph = kh / 2, pw = kw / 2;
    const bool rg = x.requires_grad() || w.requires_grad();
    Tensor<T> out = Tensor<T>::zeros({bsz, co, h, wd}, rg);
    const auto* xv = x.values().data();
    const auto* wv = w.values().data();
    auto* ov = out.values().data();
    for (int64_t b = 0; b < bsz; ++b) {
        for (int64_t oc = 0; oc < co; ++oc) {
            for (int64_t ic = 0; ic < ci; ++ic) {
                const T* xp = xv + (b * ci + ic) * h * wd;
                const T* wp = wv + (oc * ci + ic) * kh * kw;
                T* op = ov + (b * co + oc) * h * wd;
                for (int64_t oy = 0; oy < h; ++oy) {
                    for (int64_t ox = 0; ox < wd; ++ox) {
                        T acc = T(0);
                        for (int64_t ky = 0; ky < kh; ++ky) {
                            const int64_t iy = oy + ky - ph;
                            if (iy < 0 || iy >= h) {
                                continue;
                            }
                            for (int64_t kx = 0; kx < kw; ++kx) {
                                const int64_t ix = ox + kx - pw;
                                if (ix < 0 || ix >= wd) {
                                    continue;
                                }
                                acc += xp[iy * wd + ix] * wp[ky * kw + kx];
                            }
                        }
                        op[oy * wd + ox] += acc;
                    }
                }
            }
        }
    }
    if (rg) {
        tape.record([x = x, w = w, out, bsz, ci, co, h, wd, kh, kw, ph, pw]() mutable {
            const auto& g = out.grad();
            for (int64_t b = 0; b < bsz; ++b) {
                for (int64_t oc = 0; oc < co; ++oc) {
                    for (int64_t ic = 0; ic < ci; ++ic) {
                        const int64_t xbase = (b * ci + ic) * h * wd;
                        const int64_t wbase = (oc * ci + ic) * kh * kw;
                        const int64_t obase = (b * co + oc) * h * wd;
                        for (int64_t oy = 0; oy < h; ++oy) {
                            for (int64_t ox = 0; ox < wd; ++ox) {
                                const T gv = g[obase + oy * wd + ox];
                                if (gv == T(0)) {
                                    continue;
                                }
                                for (int64_t ky = 0; ky < kh; ++ky) {
                                    const int64_t iy = oy + ky - ph;
                                    if (iy < 0 || iy >= h) {
                                        continue;
                                    }
                                    for (int64_t kx = 0; kx < kw; ++kx) {
                                        const int64_t ix = ox + kx - pw;
                                        if (ix < 0 || ix >= wd) {
                                            continue;
                                        }
                                        if (x.requires_grad()) {
                                            x.grad()[xbase + iy * wd + ix] +=
                                                gv * w.values()[wbase + ky * kw + kx];
                                        }
                                        if (w.requires_grad()) {
                                            w.grad()[wbase + ky * kw + kx] +=
                                                gv * x.values()[xbase + iy * wd + ix];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// 2x2 max pooling with stride 2; ties resolve to the first (row-major) max.
template <typename T>
Tensor<T> maxpool2x2(GradTape<T>& tape, const Tensor<T>& x) {
    detail::check_rank("maxpool2x2", x, 4);
    const int64_t bsz = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0) {
        throw DimensionError("maxpool2x2: spatial size must be even, got " +
                             shape_str(x.shape()));
    }
    const int64_t oh = h / 2, ow = w / 2;
    const bool rg = x.requires_grad();
    Tensor<T> out = Tensor<T>::zeros({bsz, c, oh, ow}, rg);
    auto argmax = std::make_shared<std::vector<int64_t>>(out.values().size());
    for (int64_t b = 0; b < bsz; ++b) {
        for (int64_t ch = 0; ch < c; ++ch) {
            const int64_t xbase = (b * c + ch) * h * w;
            const int64_t obase = (b * c + ch) * oh * ow;
            for (int64_t oy = 0; oy < oh; ++oy) {
                for (int64_t ox = 0; ox < ow; ++ox) {
                    T best = x.values()[xbase + (2 * oy) * w + 2 * ox];
                    int64_t best_i = xbase + (2 * oy) * w + 2 * ox;
                    for (int64_t dy = 0; dy < 2; ++dy) {
                        for (int64_t dx = 0; dx < 2; ++dx) {
                            const int64_t i = xbase + (2 * oy + dy) * w + (2 * ox + dx);
                            if (x.values()[i] > best) {
                                best = x.values()[i];
                                best_i = i;
                            }
                        }
                    }
                    out.values()[obase + oy * ow + ox] = best;
                    (*argmax)[static_cast<size_t>(obase + oy * ow + ox)] = best_i;
                }
            }
        }
    }
    if (rg) {
        tape.record([x = x, out, argmax]() mutable {
            const auto& g = out.grad();
            for (size_t i = 0; i < g.size(); ++i) {
                x.grad()[static_cast<size_t>((*argmax)[i])] += g[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions and reshaping
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_axis(GradTape<T>& tape, const Tensor<T>& x, int axis) {
    if (axis < 0 || axis >= x.rank()) {
        throw DimensionError("sum_axis: axis " + std::to_string(axis) +
                             " out of range for shape " + shape_str(x.shape()));
    }
    int64_t outer = 0;
    int64_t inner = 0;
    detail::axis_extents(x.shape(), axis, &outer, &inner);
    const int64_t da = x.dim(axis);
    Shape oshape;
    for (int i = 0; i < x.rank(); ++i) {
        if (i != axis) {
            oshape.push_back(x.dim(i));
        }
    }
    const bool rg = x.requires_grad();
    Tensor<T> out = Tensor<T>::zeros(oshape, rg);
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t j = 0; j < da; ++j) {
            const int64_t base = (o * da + j) * inner;
            for (int64_t r = 0; r < inner; ++r) {
                out.values()[o * inner + r] += x.values()[base + r];
            }
        }
    }
    if (rg) {
        tape.record([x = x, out, outer, inner, da]() mutable {
            const auto& g = out.grad();
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t j = 0; j < da; ++j) {
                    const int64_t base = (o * da + j) * inner;
                    for (int64_t r = 0; r < inner; ++r) {
                        x.grad()[base + r] += g[o * inner + r];
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum_all(GradTape<T>& tape, const Tensor<T>& x) {
    const bool rg = x.requires_grad();
    Tensor<T> out = Tensor<T>::zeros({}, rg);
    T acc = T(0);
    for (T v : x.values()) {
        acc += v;
    }
    out.values()[0] = acc;
    if (rg) {
        tape.record([x = x, out]() mutable {
            const T g = out.grad()[0];
            for (auto& gv : x.grad()) {
                gv += g;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean_all(GradTape<T>& tape, const Tensor<T>& x) {
    const T n = static_cast<T>(x.numel());
    Tensor<T> s = sum_all(tape, x);
    return scalar_mul(tape, s, T(1) / n);
}

template <typename T>
Tensor<T> reshape(GradTape<T>& tape, const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(shape));
    }
    const bool rg = x.requires_grad();
    Tensor<T> out = Tensor<T>::from(std::move(shape), x.values(), rg);
    if (rg) {
        tape.record([x = x, out]() mutable {
            const auto& g = out.grad();
            for (size_t i = 0; i < g.size(); ++i) {
                x.grad()[i] += g[i];
            }
        });
    }
    return out;
}

// View of x[i] along axis 0; rank drops by one.
template <typename T>
Tensor<T> slice0(GradTape<T>& tape, const Tensor<T>& x, int64_t i) {
    if (x.rank() < 1 || i < 0 || i >= x.dim(0)) {
        throw DimensionError("slice0: index " + std::to_string(i) + " out of range for shape " +
                             shape_str(x.shape()));
    }
    Shape oshape(x.shape().begin() + 1, x.shape().end());
    const int64_t n = shape_numel(oshape);
    const bool rg = x.requires_grad();
    Tensor<T> out = Tensor<T>::zeros(oshape, rg);
    for (int64_t j = 0; j < n; ++j) {
        out.values()[j] = x.values()[i * n + j];
    }
    if (rg) {
        tape.record([x = x, out, i, n]() mutable {
            const auto& g = out.grad();
            for (int64_t j = 0; j < n; ++j) {
                x.grad()[i * n + j] += g[j];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax family
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void check_logits(const char* op, const Tensor<T>& z, double tau) {
    check_rank(op, z, 2);
    if (!(tau > 0.0)) {
        throw ParameterError(std::string(op) + ": temperature must be positive, got " +
                             std::to_string(tau));
    }
    if (!z.all_finite()) {
        throw NumericError(std::string(op) + ": non-finite logits");
    }
}

}  // namespace detail

// Rows of softmax(z / tau), computed with per-row max subtraction.
template <typename T>
Tensor<T> softmax_tau(GradTape<T>& tape, const Tensor<T>& z, T tau) {
    detail::check_logits("softmax_tau", z, static_cast<double>(tau));
    const int64_t b = z.dim(0), k = z.dim(1);
    const bool rg = z.requires_grad();
    Tensor<T> out = Tensor<T>::zeros(z.shape(), rg);
    for (int64_t i = 0; i < b; ++i) {
        const T* row = z.values().data() + i * k;
        T* prow = out.values().data() + i * k;
        T mx = row[0];
        for (int64_t j = 1; j < k; ++j) {
            mx = std::max(mx, row[j]);
        }
        T denom = T(0);
        for (int64_t j = 0; j < k; ++j) {
            prow[j] = std::exp((row[j] - mx) / tau);
            denom += prow[j];
        }
        for (int64_t j = 0; j < k; ++j) {
            prow[j] /= denom;
        }
    }
    if (rg) {
        tape.record([z = z, out, b, k, tau]() mutable {
            const auto& g = out.grad();
            for (int64_t i = 0; i < b; ++i) {
                const T* prow = out.values().data() + i * k;
                const T* grow = g.data() + i * k;
                T dot = T(0);
                for (int64_t j = 0; j < k; ++j) {
                    dot += grow[j] * prow[j];
                }
                for (int64_t j = 0; j < k; ++j) {
                    z.grad()[i * k + j] += prow[j] * (grow[j] - dot) / tau;
                }
            }
        });
    }
    return out;
}

// log softmax(z / tau) without intermediate exponential overflow.
template <typename T>
Tensor<T> log_softmax_tau(GradTape<T>& tape, const Tensor<T>& z, T tau) {
    detail::check_logits("log_softmax_tau", z, static_cast<double>(tau));
    const int64_t b = z.dim(0), k = z.dim(1);
    const bool rg = z.requires_grad();
    Tensor<T> out = Tensor<T>::zeros(z.shape(), rg);
    for (int64_t i = 0; i < b; ++i) {
        const T* row = z.values().data() + i * k;
        T* orow = out.values().data() + i * k;
        T mx = row[0];
        for (int64_t j = 1; j < k; ++j) {
            mx = std::max(mx, row[j]);
        }
        T denom = T(0);
        for (int64_t j = 0; j < k; ++j) {
            denom += std::exp((row[j] - mx) / tau);
        }
        const T lse = std::log(denom);
        for (int64_t j = 0; j < k; ++j) {
            orow[j] = (row[j] - mx) / tau - lse;
        }
    }
    if (rg) {
        tape.record([z = z, out, b, k, tau]() mutable {
            const auto& g = out.grad();
            for (int64_t i = 0; i < b; ++i) {
                const T* orow = out.values().data() + i * k;
                const T* grow = g.data() + i * k;
                T gsum = T(0);
                for (int64_t j = 0; j < k; ++j) {
                    gsum += grow[j];
                }
                for (int64_t j = 0; j < k; ++j) {
                    z.grad()[i * k + j] += (grow[j] - std::exp(orow[j]) * gsum) / tau;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// label-indexed ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void check_labels(const char* op, const Tensor<T>& z, const std::vector<int64_t>& y) {
    check_rank(op, z, 2);
    if (static_cast<int64_t>(y.size()) != z.dim(0)) {
        throw DimensionError(std::string(op) + ": label count " + std::to_string(y.size()) +
                             " does not match batch of " + shape_str(z.shape()));
    }
    for (int64_t v : y) {
        if (v < 0 || v >= z.dim(1)) {
            throw ParameterError(std::string(op) + ": label " + std::to_string(v) +
                                 " out of range [0, " + std::to_string(z.dim(1)) + ")");
        }
    }
}

}  // namespace detail

// out[i] = x[i, y[i]]
template <typename T>
Tensor<T> gather_labels(GradTape<T>& tape, const Tensor<T>& x, const std::vector<int64_t>& y) {
    detail::check_labels("gather_labels", x, y);
    const int64_t b = x.dim(0), k = x.dim(1);
    const bool rg = x.requires_grad();
    Tensor<T> out = Tensor<T>::zeros({b}, rg);
    for (int64_t i = 0; i < b; ++i) {
        out.values()[i] = x.values()[i * k + y[static_cast<size_t>(i)]];
    }
    if (rg) {
        tape.record([x = x, out, y, b, k]() mutable {
            const auto& g = out.grad();
            for (int64_t i = 0; i < b; ++i) {
                x.grad()[i * k + y[static_cast<size_t>(i)]] += g[i];
            }
        });
    }
    return out;
}

// Copy of x with x[i, y[i]] replaced by `value`; no grad flows into the
// overwritten slots.
template <typename T>
Tensor<T> mask_fill_labels(GradTape<T>& tape, const Tensor<T>& x, const std::vector<int64_t>& y,
                           T value) {
    detail::check_labels("mask_fill_labels", x, y);
    const int64_t b = x.dim(0), k = x.dim(1);
    const bool rg = x.requires_grad();
    Tensor<T> out = Tensor<T>::from(x.shape(), x.values(), rg);
    for (int64_t i = 0; i < b; ++i) {
        out.values()[i * k + y[static_cast<size_t>(i)]] = value;
    }
    if (rg) {
        tape.record([x = x, out, y, b, k]() mutable {
            const auto& g = out.grad();
            for (int64_t i = 0; i < b; ++i) {
                const int64_t masked = i * k + y[static_cast<size_t>(i)];
                for (int64_t j = 0; j < k; ++j) {
                    const int64_t idx = i * k + j;
                    if (idx != masked) {
                        x.grad()[idx] += g[idx];
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// pairwise structure ops
// ---------------------------------------------------------------------------

// d[i,j] = ||x_i - x_j||_2 over rows of x [B,D]. Coincident points get zero
// gradient (subgradient choice at the non-differentiable origin).
template <typename T>
Tensor<T> pairwise_dist(GradTape<T>& tape, const Tensor<T>& x) {
    detail::check_rank("pairwise_dist", x, 2);
    const int64_t b = x.dim(0), d = x.dim(1);
    const bool rg = x.requires_grad();
    Tensor<T> out = Tensor<T>::zeros({b, b}, rg);
    for (int64_t i = 0; i < b; ++i) {
        for (int64_t j = i + 1; j < b; ++j) {
            T acc = T(0);
            for (int64_t c = 0; c < d; ++c) {
                const T diff = x.values()[i * d + c] - x.values()[j * d + c];
                acc += diff * diff;
            }
            const T dist = std::sqrt(acc);
            out.values()[i * b + j] = dist;
            out.values()[j * b + i] = dist;
        }
    }
    if (rg) {
        tape.record([x = x, out, b, d]() mutable {
            const auto& g = out.grad();
            for (int64_t i = 0; i < b; ++i) {
                for (int64_t j = 0; j < b; ++j) {
                    if (i == j) {
                        continue;
                    }
                    const T dist = out.values()[i * b + j];
                    if (dist <= T(kProbFloor)) {
                        continue;
                    }
                    const T gv = g[i * b + j] / dist;
                    if (gv == T(0)) {
                        continue;
                    }
                    for (int64_t c = 0; c < d; ++c) {
                        const T diff = x.values()[i * d + c] - x.values()[j * d + c];
                        x.grad()[i * d + c] += gv * diff;
                        x.grad()[j * d + c] -= gv * diff;
                    }
                }
            }
        });
    }
    return out;
}

// t[j,i,:] = x_i - x_j over rows of x [B,D]; the per-anchor offset bundle the
// relational angle term is built from.
template <typename T>
Tensor<T> pairwise_diff(GradTape<T>& tape, const Tensor<T>& x) {
    detail::check_rank("pairwise_diff", x, 2);
    const int64_t b = x.dim(0), d = x.dim(1);
    const bool rg = x.requires_grad();
    Tensor<T> out = Tensor<T>::zeros({b, b, d}, rg);
    for (int64_t j = 0; j < b; ++j) {
        for (int64_t i = 0; i < b; ++i) {
            for (int64_t c = 0; c < d; ++c) {
                out.values()[(j * b + i) * d + c] = x.values()[i * d + c] - x.values()[j * d + c];
            }
        }
    }
    if (rg) {
        tape.record([x = x, out, b, d]() mutable {
            const auto& g = out.grad();
            for (int64_t j = 0; j < b; ++j) {
                for (int64_t i = 0; i < b; ++i) {
                    for (int64_t c = 0; c < d; ++c) {
                        const T gv = g[(j * b + i) * d + c];
                        x.grad()[i * d + c] += gv;
                        x.grad()[j * d + c] -= gv;
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// composites
// ---------------------------------------------------------------------------

// Rows of x [R,C] scaled to unit L2 norm; zero rows stay zero via the norm
// floor and receive no gradient.
template <typename T>
Tensor<T> l2_normalize_rows(GradTape<T>& tape, const Tensor<T>& x) {
    detail::check_rank("l2_normalize_rows", x, 2);
    Tensor<T> norms = sqrt(tape, sum_axis(tape, square(tape, x), 1));
    return div_axis(tape, x, clamp_min(tape, norms, T(kProbFloor)), 0);
}

// Cosine similarity matrix over rows of x; zero rows yield zero cosines.
template <typename T>
Tensor<T> cosine_matrix(GradTape<T>& tape, const Tensor<T>& x) {
    Tensor<T> xn = l2_normalize_rows(tape, x);
    return matmul_nt(tape, xn, xn);
}

namespace detail {

template <typename T>
void check_distribution(const char* op, const Tensor<T>& p) {
    check_rank(op, p, 2);
    const int64_t b = p.dim(0), k = p.dim(1);
    for (int64_t i = 0; i < b; ++i) {
        T row_sum = T(0);
        for (int64_t j = 0; j < k; ++j) {
            const T v = p.values()[i * k + j];
            if (v < T(0)) {
                throw ContractError(std::string(op) + ": negative probability in row " +
                                    std::to_string(i));
            }
            row_sum += v;
        }
        if (std::abs(static_cast<double>(row_sum) - 1.0) > 1e-5) {
            throw ContractError(std::string(op) + ": row " + std::to_string(i) +
                                " sums to " + std::to_string(static_cast<double>(row_sum)) +
                                ", not 1");
        }
    }
}

}  // namespace detail

// Mean over rows of KL(p || q) = sum_k p_k (ln p_k - ln q_k), with 0*ln 0 = 0
// via the probability floor. Differentiable in whichever argument tracks
// gradients.
template <typename T>
Tensor<T> kl_divergence(GradTape<T>& tape, const Tensor<T>& p, const Tensor<T>& q) {
    detail::check_same_shape("kl_divergence", p, q);
    detail::check_distribution("kl_divergence", p);
    detail::check_distribution("kl_divergence", q);
    Tensor<T> log_ratio = sub(tape, log(tape, p), log(tape, q));
    Tensor<T> per_row = sum_axis(tape, mul(tape, p, log_ratio), 1);
    return mean_all(tape, per_row);
}

}  // namespace smskd

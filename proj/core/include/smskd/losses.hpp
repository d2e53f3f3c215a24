#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smskd/errors.hpp"
#include "smskd/models.hpp"
#include "smskd/ops.hpp"
#include "smskd/rng.hpp"
#include "smskd/tensor.hpp"

namespace smskd {

enum class Method { CE, KD, DKD, FitNets, AT, VID, RKD, PKT, CC };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::CE: return "CE";
        case Method::KD: return "KD";
        case Method::DKD: return "DKD";
        case Method::FitNets: return "FitNets";
        case Method::AT: return "AT";
        case Method::VID: return "VID";
        case Method::RKD: return "RKD";
        case Method::PKT: return "PKT";
        case Method::CC: return "CC";
    }
    return "?";
}

inline Method parse_method(const std::string& name) {
    for (Method m : {Method::CE, Method::KD, Method::DKD, Method::FitNets, Method::AT,
                     Method::VID, Method::RKD, Method::PKT, Method::CC}) {
        if (name == method_name(m)) {
            return m;
        }
    }
    throw ParameterError("unknown method '" + name +
                         "' (expected CE, KD, DKD, FitNets, AT, VID, RKD, PKT or CC)");
}

inline bool method_needs_taps(Method m) {
    return m == Method::FitNets || m == Method::AT || m == Method::VID || m == Method::RKD ||
           m == Method::PKT || m == Method::CC;
}

inline bool method_needs_heads(Method m) { return m == Method::FitNets || m == Method::VID; }

// Per-method defaults: lambda_c = 1 everywhere; the distillation-term scale
// factors follow the CRD-protocol convention (KD 1, FitNets 100, AT 1000,
// VID 1, RKD 1 with w_d=25/w_a=50, PKT 30000, CC 0.02).
struct MethodConfig {
    Method method = Method::KD;
    double lambda_c = 1.0;
    double tau = 4.0;
    double distill_scale = 1.0;
    double alpha = 1.0;  // DKD target-class weight
    double beta = 8.0;   // DKD non-target weight
    double w_d = 25.0;   // RKD distance weight
    double w_a = 50.0;   // RKD angle weight
    double at_power = 2.0;
    bool all_tap_pairs = false;  // default: last tap pair only
    double tau_ref = 1.0;        // reference-KL temperature, no tau^2 factor
    bool tcp_from_teacher = false;

    static MethodConfig defaults(Method m) {
        MethodConfig c;
        c.method = m;
        switch (m) {
            case Method::CE: c.distill_scale = 0.0; break;
            case Method::FitNets: c.distill_scale = 100.0; break;
            case Method::AT: c.distill_scale = 1000.0; break;
            case Method::PKT: c.distill_scale = 30000.0; break;
            case Method::CC: c.distill_scale = 0.02; break;
            default: c.distill_scale = 1.0; break;
        }
        return c;
    }

    void validate() const {
        if (lambda_c < 0 || distill_scale < 0 || alpha < 0 || beta < 0 || w_d < 0 || w_a < 0) {
            throw ParameterError("method config: weights must be nonnegative");
        }
        if (!(tau > 0) || !(tau_ref > 0)) {
            throw ParameterError("method config: temperatures must be positive");
        }
    }
};

// Per-batch bundle feeding the loss suite. Teacher and reference tensors are
// detached: their producing models are frozen, so no tape nodes reference
// them.
template <typename T>
struct DistillBatchOutputs {
    Tensor<T> teacher_logits;
    Tensor<T> student_logits;
    Tensor<T> reference_logits;  // undefined at stage 1
    std::vector<Tensor<T>> teacher_taps;
    std::vector<Tensor<T>> student_taps;
    std::vector<int64_t> labels;
    T tau = T(4);
};

namespace detail {

template <typename T>
void check_detached(const char* who, const Tensor<T>& t) {
    if (t.requires_grad()) {
        throw ContractError(std::string(who) + " must be detached (requires_grad false)");
    }
}

inline std::vector<size_t> selected_pairs(size_t n_pairs, bool all_pairs) {
    if (n_pairs == 0) {
        throw ContractError("loss requires feature taps, but the models expose none");
    }
    if (all_pairs) {
        std::vector<size_t> idx(n_pairs);
        for (size_t i = 0; i < n_pairs; ++i) {
            idx[i] = i;
        }
        return idx;
    }
    return {n_pairs - 1};
}

template <typename T>
void check_tap_lists(const std::vector<Tensor<T>>& t_taps, const std::vector<Tensor<T>>& s_taps) {
    if (t_taps.size() != s_taps.size()) {
        throw ContractError("unpaired taps: teacher exposes " + std::to_string(t_taps.size()) +
                            ", student exposes " + std::to_string(s_taps.size()));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// auxiliary heads
// ---------------------------------------------------------------------------

// Learnable adapter for one tap pair. The regressor maps the student tap to
// the teacher tap's shape (linear for flat taps, 1x1 conv for spatial taps)
// and exists only when the shapes differ; log_var is VID's per-unit
// log-standard-deviation.
template <typename T>
struct TapHead {
    Tensor<T> weight;   // [Dt,Ds] or [Ct,Cs,1,1]; undefined => identity
    Tensor<T> bias;     // [Dt] or [Ct]
    Tensor<T> log_var;  // VID only
    bool spatial = false;
};

template <typename T>
struct AuxHeads {
    Method method = Method::KD;
    std::vector<TapHead<T>> heads;  // aligned with the selected tap pairs

    std::vector<std::pair<std::string, Tensor<T>>> parameters() {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        for (size_t i = 0; i < heads.size(); ++i) {
            const std::string prefix = "head" + std::to_string(i);
            if (heads[i].weight.defined()) {
                out.emplace_back(prefix + ".weight", heads[i].weight);
                out.emplace_back(prefix + ".bias", heads[i].bias);
            }
            if (heads[i].log_var.defined()) {
                out.emplace_back(prefix + ".log_var", heads[i].log_var);
            }
        }
        return out;
    }

    void zero_grad() {
        for (auto& [name, p] : parameters()) {
            p.zero_grad();
        }
    }
};

// Builds the adapters a method needs from the two models' tap shapes.
// Tap shapes here exclude the batch dimension.
template <typename T>
AuxHeads<T> make_aux_heads(const MethodConfig& cfg, const std::vector<Shape>& teacher_taps,
                           const std::vector<Shape>& student_taps, uint64_t seed) {
    AuxHeads<T> aux;
    aux.method = cfg.method;
    if (!method_needs_heads(cfg.method)) {
        return aux;
    }
    if (teacher_taps.size() != student_taps.size()) {
        throw ContractError("unpaired taps: teacher exposes " +
                            std::to_string(teacher_taps.size()) + ", student exposes " +
                            std::to_string(student_taps.size()));
    }
    DetRng rng(seed);
    for (size_t i : detail::selected_pairs(teacher_taps.size(), cfg.all_tap_pairs)) {
        const Shape& tt = teacher_taps[i];
        const Shape& st = student_taps[i];
        TapHead<T> head;
        head.spatial = tt.size() == 3;
        if ((tt.size() == 3) != (st.size() == 3)) {
            throw ContractError("tap pair " + std::to_string(i) +
                                " mixes spatial and flat taps: " + shape_str(tt) + " vs " +
                                shape_str(st));
        }
        const int64_t t_units = tt[0];
        const int64_t s_units = st[0];
        if (head.spatial && (tt[1] != st[1] || tt[2] != st[2])) {
            throw ContractError("tap pair " + std::to_string(i) + " spatial sizes differ: " +
                                shape_str(tt) + " vs " + shape_str(st));
        }
        const int64_t t_dim = head.spatial ? t_units : shape_numel(tt);
        const int64_t s_dim = head.spatial ? s_units : shape_numel(st);
        if (t_dim != s_dim) {
            const double bound = std::sqrt(6.0 / static_cast<double>(s_dim));
            head.weight = head.spatial ? Tensor<T>::zeros({t_dim, s_dim, 1, 1}, true)
                                       : Tensor<T>::zeros({t_dim, s_dim}, true);
            for (T& v : head.weight.values()) {
                v = static_cast<T>(rng.uniform(-bound, bound));
            }
            head.bias = Tensor<T>::zeros({t_dim}, true);
        }
        if (cfg.method == Method::VID) {
            head.log_var = Tensor<T>::zeros({t_dim}, true);
        }
        aux.heads.push_back(std::move(head));
    }
    return aux;
}

// Regressed student tap: identity when no adapter was needed.
template <typename T>
Tensor<T> apply_head(GradTape<T>& tape, const TapHead<T>& head, const Tensor<T>& student_tap) {
    if (!head.weight.defined()) {
        return student_tap;
    }
    if (head.spatial) {
        return add_axis(tape, conv2d(tape, student_tap, head.weight), head.bias, 1);
    }
    return add_axis(tape, matmul_nt(tape, student_tap, head.weight), head.bias, 1);
}

// ---------------------------------------------------------------------------
// response-based losses
// ---------------------------------------------------------------------------

// Mean over the batch of -ln p_y at temperature 1.
template <typename T>
Tensor<T> cross_entropy(GradTape<T>& tape, const Tensor<T>& logits,
                        const std::vector<int64_t>& y) {
    Tensor<T> logp = log_softmax_tau(tape, logits, T(1));
    Tensor<T> picked = gather_labels(tape, logp, y);
    return scalar_mul(tape, mean_all(tape, picked), T(-1));
}

// Vanilla distillation: tau^2 * mean KL(p_teacher || p_student), both
// distributions softened at tau. Gradient reaches the student logits only.
template <typename T>
Tensor<T> kd_loss(GradTape<T>& tape, const Tensor<T>& teacher_logits,
                  const Tensor<T>& student_logits, T tau) {
    detail::check_detached("teacher logits", teacher_logits);
    Tensor<T> p_t = softmax_tau(tape, teacher_logits, tau);
    Tensor<T> logp_t = log_softmax_tau(tape, teacher_logits, tau);
    Tensor<T> logp_s = log_softmax_tau(tape, student_logits, tau);
    Tensor<T> rows = sum_axis(tape, mul(tape, p_t, sub(tape, logp_t, logp_s)), 1);
    return scalar_mul(tape, mean_all(tape, rows), tau * tau);
}

// Decoupled KD: alpha * TCKD + beta * NCKD. TCKD is the binary KL over
// (p_y, 1-p_y); NCKD is the KL over non-target probabilities renormalized to
// sum 1 (softmax with the target logit masked out). This formulation makes
// KL = TCKD + (1-p_y^T) * NCKD hold exactly per sample.
template <typename T>
Tensor<T> dkd_loss(GradTape<T>& tape, const Tensor<T>& teacher_logits,
                   const Tensor<T>& student_logits, const std::vector<int64_t>& y, T tau,
                   T alpha, T beta) {
    detail::check_detached("teacher logits", teacher_logits);
    if (teacher_logits.dim(1) < 2) {
        throw ContractError("dkd_loss: needs at least 2 classes, got " +
                            shape_str(teacher_logits.shape()));
    }
    const T tau2 = tau * tau;

    Tensor<T> p_t = softmax_tau(tape, teacher_logits, tau);
    Tensor<T> p_s = softmax_tau(tape, student_logits, tau);
    Tensor<T> pty = gather_labels(tape, p_t, y);
    Tensor<T> psy = gather_labels(tape, p_s, y);
    Tensor<T> qty = scalar_add(tape, scalar_mul(tape, pty, T(-1)), T(1));
    Tensor<T> qsy = scalar_add(tape, scalar_mul(tape, psy, T(-1)), T(1));
    Tensor<T> tckd_rows =
        add(tape, mul(tape, pty, sub(tape, log(tape, pty), log(tape, psy))),
            mul(tape, qty, sub(tape, log(tape, qty), log(tape, qsy))));
    Tensor<T> tckd = scalar_mul(tape, mean_all(tape, tckd_rows), tau2);

    const T neg_inf_fill = T(-1e9);
    Tensor<T> zt_masked = mask_fill_labels(tape, teacher_logits, y, neg_inf_fill);
    Tensor<T> zs_masked = mask_fill_labels(tape, student_logits, y, neg_inf_fill);
    Tensor<T> q_t = softmax_tau(tape, zt_masked, tau);
    Tensor<T> logq_t = log_softmax_tau(tape, zt_masked, tau);
    Tensor<T> logq_s = log_softmax_tau(tape, zs_masked, tau);
    Tensor<T> nckd_rows = sum_axis(tape, mul(tape, q_t, sub(tape, logq_t, logq_s)), 1);
    Tensor<T> nckd = scalar_mul(tape, mean_all(tape, nckd_rows), tau2);

    return add(tape, scalar_mul(tape, tckd, alpha), scalar_mul(tape, nckd, beta));
}

// ---------------------------------------------------------------------------
// feature-based losses
// ---------------------------------------------------------------------------

// Mean squared error between the teacher tap and the regressed student tap,
// summed over the configured tap pairs.
template <typename T>
Tensor<T> fitnets_loss(GradTape<T>& tape, const std::vector<Tensor<T>>& teacher_taps,
                       const std::vector<Tensor<T>>& student_taps, const AuxHeads<T>& heads,
                       bool all_pairs) {
    detail::check_tap_lists(teacher_taps, student_taps);
    const std::vector<size_t> idx = detail::selected_pairs(teacher_taps.size(), all_pairs);
    if (heads.heads.size() != idx.size()) {
        throw ContractError("fitnets_loss: expected " + std::to_string(idx.size()) +
                            " heads, got " + std::to_string(heads.heads.size()));
    }
    Tensor<T> total;
    for (size_t h = 0; h < idx.size(); ++h) {
        const Tensor<T>& t_tap = teacher_taps[idx[h]];
        detail::check_detached("teacher tap", t_tap);
        Tensor<T> regressed = apply_head(tape, heads.heads[h], student_taps[idx[h]]);
        detail::check_same_shape("fitnets_loss", t_tap, regressed);
        Tensor<T> mse = mean_all(tape, square(tape, sub(tape, t_tap, regressed)));
        total = total.defined() ? add(tape, total, mse) : mse;
    }
    return total;
}

// Attention transfer: per pair, the channel-summed |h|^p map is flattened and
// L2-normalized per sample; the loss is the mean Euclidean distance between
// the normalized teacher and student maps. Channel counts may differ; spatial
// extents must match.
template <typename T>
Tensor<T> at_loss(GradTape<T>& tape, const std::vector<Tensor<T>>& teacher_taps,
                  const std::vector<Tensor<T>>& student_taps, T p, bool all_pairs) {
    detail::check_tap_lists(teacher_taps, student_taps);
    const std::vector<size_t> idx = detail::selected_pairs(teacher_taps.size(), all_pairs);
    auto attention = [&](const Tensor<T>& tap) {
        detail::check_rank("at_loss", tap, 4);
        Tensor<T> powed = p == T(2) ? square(tape, tap) : abs_pow(tape, tap, p);
        Tensor<T> amap = sum_axis(tape, powed, 1);  // [B,H,W]
        Tensor<T> flat = reshape(tape, amap, {amap.dim(0), amap.dim(1) * amap.dim(2)});
        return l2_normalize_rows(tape, flat);
    };
    Tensor<T> total;
    for (size_t i : idx) {
        const Tensor<T>& t_tap = teacher_taps[i];
        const Tensor<T>& s_tap = student_taps[i];
        detail::check_detached("teacher tap", t_tap);
        if (t_tap.rank() != 4 || s_tap.rank() != 4 || t_tap.dim(2) != s_tap.dim(2) ||
            t_tap.dim(3) != s_tap.dim(3)) {
            throw DimensionError("at_loss: spatial shapes disagree, " + shape_str(t_tap.shape()) +
                                 " vs " + shape_str(s_tap.shape()));
        }
        Tensor<T> diff = sub(tape, attention(s_tap), attention(t_tap));
        Tensor<T> per_sample = sqrt(tape, sum_axis(tape, square(tape, diff), 1));
        Tensor<T> pair_loss = mean_all(tape, per_sample);
        total = total.defined() ? add(tape, total, pair_loss) : pair_loss;
    }
    if (idx.size() > 1) {
        total = scalar_mul(tape, total, T(1) / static_cast<T>(idx.size()));
    }
    return total;
}

// Variational information distillation: Gaussian negative log-likelihood of
// the teacher tap under mean mu(student tap) and per-unit variance
// exp(2*log_var), additive constants dropped:
//   mean over elements of [ s + (h_t - mu)^2 / (2 exp(2s)) ].
template <typename T>
Tensor<T> vid_loss(GradTape<T>& tape, const std::vector<Tensor<T>>& teacher_taps,
                   const std::vector<Tensor<T>>& student_taps, const AuxHeads<T>& heads,
                   bool all_pairs) {
    detail::check_tap_lists(teacher_taps, student_taps);
    const std::vector<size_t> idx = detail::selected_pairs(teacher_taps.size(), all_pairs);
    if (heads.heads.size() != idx.size()) {
        throw ContractError("vid_loss: expected " + std::to_string(idx.size()) + " heads, got " +
                            std::to_string(heads.heads.size()));
    }
    Tensor<T> total;
    for (size_t h = 0; h < idx.size(); ++h) {
        const Tensor<T>& t_tap = teacher_taps[idx[h]];
        const TapHead<T>& head = heads.heads[h];
        if (!head.log_var.defined()) {
            throw ContractError("vid_loss: head " + std::to_string(h) + " lacks log_var");
        }
        detail::check_detached("teacher tap", t_tap);
        Tensor<T> mu = apply_head(tape, head, student_taps[idx[h]]);
        detail::check_same_shape("vid_loss", t_tap, mu);
        Tensor<T> resid2 = square(tape, sub(tape, t_tap, mu));
        Tensor<T> inv_var = exp(tape, scalar_mul(tape, head.log_var, T(-2)));
        Tensor<T> quad = scalar_mul(tape, mul_axis(tape, resid2, inv_var, 1), T(0.5));
        Tensor<T> nll = mean_all(tape, add_axis(tape, quad, head.log_var, 1));
        total = total.defined() ? add(tape, total, nll) : nll;
    }
    return total;
}

// ---------------------------------------------------------------------------
// relation-based losses (operate on flattened penultimate embeddings)
// ---------------------------------------------------------------------------

struct RkdFlags {
    bool distance_skipped = false;
    bool angle_skipped = false;
};

namespace detail {

// Pairwise distance matrix normalized by its mean strictly-positive entry.
// The entry count is taken from the forward values and treated as constant.
template <typename T>
Tensor<T> normalized_distances(GradTape<T>& tape, const Tensor<T>& embed) {
    const int64_t b = embed.dim(0);
    Tensor<T> dm = pairwise_dist(tape, embed);
    int64_t nonzero = 0;
    for (T v : dm.values()) {
        if (v > T(0)) {
            ++nonzero;
        }
    }
    const T denom = static_cast<T>(std::max<int64_t>(nonzero, 1));
    Tensor<T> mean_dist = scalar_mul(tape, sum_all(tape, dm), T(1) / denom);
    Tensor<T> mean_vec = clamp_min(tape, reshape(tape, mean_dist, {1}), T(kProbFloor));
    Tensor<T> flat = reshape(tape, dm, {1, b * b});
    return div_axis(tape, flat, mean_vec, 0);
}

// Matrix of angle cosines anchored at sample j: C_j[i,k] is the cosine of the
// angle at x_j between x_i and x_k. Degenerate rows (i == j) are zero via the
// norm floor and contribute nothing to a teacher/student Huber comparison.
template <typename T>
std::vector<Tensor<T>> angle_cosine_slabs(GradTape<T>& tape, const Tensor<T>& embed) {
    const int64_t b = embed.dim(0);
    const int64_t d = embed.dim(1);
    Tensor<T> diffs = pairwise_diff(tape, embed);
    Tensor<T> unit = l2_normalize_rows(tape, reshape(tape, diffs, {b * b, d}));
    Tensor<T> unit3 = reshape(tape, unit, {b, b, d});
    std::vector<Tensor<T>> slabs;
    slabs.reserve(static_cast<size_t>(b));
    for (int64_t j = 0; j < b; ++j) {
        Tensor<T> uj = slice0(tape, unit3, j);
        slabs.push_back(matmul_nt(tape, uj, uj));
    }
    return slabs;
}

}  // namespace detail

// Relational KD. Distance term: Huber(delta=1) between pairwise-distance
// matrices, each normalized by its own mean nonzero distance, averaged over
// ordered off-diagonal pairs. Angle term: Huber between the cosines of all
// ordered triplets (angle at the middle point), averaged over ordered
// triplets. Terms whose minimum batch size is not met are skipped and
// flagged.
template <typename T>
Tensor<T> rkd_loss(GradTape<T>& tape, const Tensor<T>& teacher_embed,
                   const Tensor<T>& student_embed, T w_d, T w_a, RkdFlags* flags = nullptr) {
    detail::check_rank("rkd_loss", teacher_embed, 2);
    detail::check_rank("rkd_loss", student_embed, 2);
    detail::check_detached("teacher embedding", teacher_embed);
    const int64_t b = student_embed.dim(0);
    if (teacher_embed.dim(0) != b) {
        throw DimensionError("rkd_loss: batch sizes disagree, " +
                             shape_str(teacher_embed.shape()) + " vs " +
                             shape_str(student_embed.shape()));
    }
    RkdFlags local;
    Tensor<T> total = Tensor<T>::scalar(T(0));

    if (b >= 2) {
        Tensor<T> psi_t = detail::normalized_distances(tape, teacher_embed);
        Tensor<T> psi_s = detail::normalized_distances(tape, student_embed);
        Tensor<T> hub = huber1(tape, sub(tape, psi_s, psi_t));
        Tensor<T> dist_term =
            scalar_mul(tape, sum_all(tape, hub), T(1) / static_cast<T>(b * (b - 1)));
        total = add(tape, total, scalar_mul(tape, dist_term, w_d));
    } else {
        local.distance_skipped = true;
    }

    if (b >= 3) {
        std::vector<Tensor<T>> slabs_t = detail::angle_cosine_slabs(tape, teacher_embed);
        std::vector<Tensor<T>> slabs_s = detail::angle_cosine_slabs(tape, student_embed);
        Tensor<T> acc;
        for (int64_t j = 0; j < b; ++j) {
            Tensor<T> hj = sum_all(
                tape, huber1(tape, sub(tape, slabs_s[static_cast<size_t>(j)],
                                       slabs_t[static_cast<size_t>(j)])));
            acc = acc.defined() ? add(tape, acc, hj) : hj;
        }
        Tensor<T> angle_term =
            scalar_mul(tape, acc, T(1) / static_cast<T>(b * (b - 1) * (b - 2)));
        total = add(tape, total, scalar_mul(tape, angle_term, w_a));
    } else {
        local.angle_skipped = true;
    }

    if (flags != nullptr) {
        *flags = local;
    }
    return total;
}

namespace detail {

// Row-normalized cosine kernel: k_ij = (cos(x_i, x_j) + 1) / 2 with the
// diagonal zeroed, rows scaled to conditional distributions.
template <typename T>
Tensor<T> pkt_kernel(GradTape<T>& tape, const Tensor<T>& embed) {
    const int64_t b = embed.dim(0);
    Tensor<T> cos = cosine_matrix(tape, embed);
    Tensor<T> shifted = scalar_mul(tape, scalar_add(tape, cos, T(1)), T(0.5));
    Tensor<T> mask = Tensor<T>::full({b, b}, T(1));
    for (int64_t i = 0; i < b; ++i) {
        mask.values()[i * b + i] = T(0);
    }
    Tensor<T> off_diag = mul(tape, shifted, mask);
    Tensor<T> rows = clamp_min(tape, sum_axis(tape, off_diag, 1), T(kProbFloor));
    return div_axis(tape, off_diag, rows, 0);
}

}  // namespace detail

// Probabilistic knowledge transfer: mean over rows of
// KL(teacher conditional || student conditional) over the cosine kernels.
template <typename T>
Tensor<T> pkt_loss(GradTape<T>& tape, const Tensor<T>& teacher_embed,
                   const Tensor<T>& student_embed) {
    detail::check_rank("pkt_loss", teacher_embed, 2);
    detail::check_rank("pkt_loss", student_embed, 2);
    detail::check_detached("teacher embedding", teacher_embed);
    const int64_t b = student_embed.dim(0);
    if (teacher_embed.dim(0) != b || b < 2) {
        throw ContractError("pkt_loss: needs matching batches of size >= 2, got " +
                            shape_str(teacher_embed.shape()) + " and " +
                            shape_str(student_embed.shape()));
    }
    Tensor<T> p_t = detail::pkt_kernel(tape, teacher_embed);
    Tensor<T> p_s = detail::pkt_kernel(tape, student_embed);
    Tensor<T> elems = mul(tape, p_t, sub(tape, log(tape, p_t), log(tape, p_s)));
    return scalar_mul(tape, sum_all(tape, elems), T(1) / static_cast<T>(b));
}

// Correlation congruence: squared Frobenius distance between the B x B
// correlation matrices of the row-normalized embeddings, divided by B^2.
template <typename T>
Tensor<T> cc_loss(GradTape<T>& tape, const Tensor<T>& teacher_embed,
                  const Tensor<T>& student_embed) {
    detail::check_rank("cc_loss", teacher_embed, 2);
    detail::check_rank("cc_loss", student_embed, 2);
    detail::check_detached("teacher embedding", teacher_embed);
    const int64_t b = student_embed.dim(0);
    if (teacher_embed.dim(0) != b || b < 2) {
        throw ContractError("cc_loss: needs matching batches of size >= 2, got " +
                            shape_str(teacher_embed.shape()) + " and " +
                            shape_str(student_embed.shape()));
    }
    Tensor<T> g_t = cosine_matrix(tape, teacher_embed);
    Tensor<T> g_s = cosine_matrix(tape, student_embed);
    Tensor<T> fro = sum_all(tape, square(tape, sub(tape, g_t, g_s)));
    return scalar_mul(tape, fro, T(1) / static_cast<T>(b * b));
}

// ---------------------------------------------------------------------------
// reference anchoring
// ---------------------------------------------------------------------------

// Mean KL(p_student || p_reference). Note the direction is student-first,
// opposite to vanilla KD, and there is no tau^2 factor.
template <typename T>
Tensor<T> ref_loss(GradTape<T>& tape, const Tensor<T>& student_logits,
                   const Tensor<T>& reference_logits, T tau_ref = T(1)) {
    if (!reference_logits.defined()) {
        throw ContractError("ref_loss: reference logits required but absent");
    }
    detail::check_detached("reference logits", reference_logits);
    Tensor<T> p_s = softmax_tau(tape, student_logits, tau_ref);
    Tensor<T> logp_s = log_softmax_tau(tape, student_logits, tau_ref);
    Tensor<T> logp_r = log_softmax_tau(tape, reference_logits, tau_ref);
    Tensor<T> rows = sum_axis(tape, mul(tape, p_s, sub(tape, logp_s, logp_r)), 1);
    return mean_all(tape, rows);
}

// Reference KL weighted per sample by the true class probability (TCP) of
// `tcp_logits` (the reference model's by default, the teacher's under the
// comparison switch). TCP is a constant weight; no gradient flows through it.
template <typename T>
Tensor<T> adaref_loss(GradTape<T>& tape, const Tensor<T>& student_logits,
                      const Tensor<T>& reference_logits, const std::vector<int64_t>& y,
                      T tau_ref = T(1), const Tensor<T>* tcp_logits = nullptr) {
    if (!reference_logits.defined()) {
        throw ContractError("adaref_loss: reference logits required but absent");
    }
    detail::check_detached("reference logits", reference_logits);
    const Tensor<T>& tcp_src = tcp_logits != nullptr ? *tcp_logits : reference_logits;
    detail::check_detached("TCP source logits", tcp_src);
    Tensor<T> tcp = gather_labels(tape, softmax_tau(tape, tcp_src, tau_ref), y);
    Tensor<T> p_s = softmax_tau(tape, student_logits, tau_ref);
    Tensor<T> logp_s = log_softmax_tau(tape, student_logits, tau_ref);
    Tensor<T> logp_r = log_softmax_tau(tape, reference_logits, tau_ref);
    Tensor<T> rows = sum_axis(tape, mul(tape, p_s, sub(tape, logp_s, logp_r)), 1);
    return mean_all(tape, mul(tape, tcp, rows));
}

// ---------------------------------------------------------------------------
// stage composition
// ---------------------------------------------------------------------------

enum class RefMode { none, plain, adaptive };

inline const char* ref_mode_name(RefMode m) {
    switch (m) {
        case RefMode::none: return "none";
        case RefMode::plain: return "plain";
        case RefMode::adaptive: return "adaptive";
    }
    return "?";
}

template <typename T>
struct StageLossParts {
    Tensor<T> total;
    Tensor<T> distill;  // unscaled method loss
    Tensor<T> cls;
    Tensor<T> ref;  // undefined when the reference term is absent
};

// Flattened last tap, the embedding relation losses consume.
template <typename T>
Tensor<T> last_tap_embedding(GradTape<T>& tape, const std::vector<Tensor<T>>& taps) {
    if (taps.empty()) {
        throw ContractError("relation loss requires feature taps, but the model exposes none");
    }
    const Tensor<T>& tap = taps.back();
    return reshape(tape, tap, {tap.dim(0), tap.numel() / tap.dim(0)});
}

// The method-specific distillation term, unscaled.
template <typename T>
Tensor<T> distill_term(GradTape<T>& tape, const DistillBatchOutputs<T>& out,
                       const MethodConfig& cfg, const AuxHeads<T>* heads) {
    if (method_needs_heads(cfg.method) && heads == nullptr) {
        throw ContractError(std::string(method_name(cfg.method)) +
                            " requires auxiliary heads, none provided");
    }
    switch (cfg.method) {
        case Method::CE:
            return Tensor<T>::scalar(T(0));
        case Method::KD:
            return kd_loss(tape, out.teacher_logits, out.student_logits, out.tau);
        case Method::DKD:
            return dkd_loss(tape, out.teacher_logits, out.student_logits, out.labels, out.tau,
                            T(cfg.alpha), T(cfg.beta));
        case Method::FitNets:
            return fitnets_loss(tape, out.teacher_taps, out.student_taps, *heads,
                                cfg.all_tap_pairs);
        case Method::AT:
            return at_loss(tape, out.teacher_taps, out.student_taps, T(cfg.at_power),
                           cfg.all_tap_pairs);
        case Method::VID:
            return vid_loss(tape, out.teacher_taps, out.student_taps, *heads, cfg.all_tap_pairs);
        case Method::RKD:
            return rkd_loss(tape, last_tap_embedding(tape, out.teacher_taps),
                            last_tap_embedding(tape, out.student_taps), T(cfg.w_d), T(cfg.w_a));
        case Method::PKT:
            return pkt_loss(tape, last_tap_embedding(tape, out.teacher_taps),
                            last_tap_embedding(tape, out.student_taps));
        case Method::CC:
            return cc_loss(tape, last_tap_embedding(tape, out.teacher_taps),
                           last_tap_embedding(tape, out.student_taps));
    }
    throw ContractError("unknown method");
}

// Stage objective: scale*distill + lambda_c*cls, plus lambda_r times the
// (adaptive) reference term for stages after the first. With lambda_r == 0
// the reference term is skipped outright, so the value equals the
// initial-stage composition bit for bit.
template <typename T>
StageLossParts<T> stage_loss(GradTape<T>& tape, const DistillBatchOutputs<T>& out,
                             const MethodConfig& cfg, int stage_index, T lambda_r,
                             RefMode ref_mode, const AuxHeads<T>* heads = nullptr) {
    if (stage_index < 1) {
        throw ContractError("stage_loss: stage index must be >= 1");
    }
    cfg.validate();
    if (lambda_r < T(0)) {
        throw ParameterError("stage_loss: lambda_r must be nonnegative");
    }
    StageLossParts<T> parts;
    parts.distill = distill_term(tape, out, cfg, heads);
    parts.cls = cross_entropy(tape, out.student_logits, out.labels);
    parts.total = add(tape, scalar_mul(tape, parts.distill, T(cfg.distill_scale)),
                      scalar_mul(tape, parts.cls, T(cfg.lambda_c)));
    const bool want_ref = stage_index > 1 && ref_mode != RefMode::none && lambda_r > T(0);
    if (want_ref) {
        if (!out.reference_logits.defined()) {
            throw ContractError("stage_loss: reference required but absent at stage " +
                                std::to_string(stage_index));
        }
        const Tensor<T>* tcp_src =
            cfg.tcp_from_teacher ? &out.teacher_logits : &out.reference_logits;
        parts.ref = ref_mode == RefMode::adaptive
                        ? adaref_loss(tape, out.student_logits, out.reference_logits, out.labels,
                                      T(cfg.tau_ref), tcp_src)
                        : ref_loss(tape, out.student_logits, out.reference_logits,
                                   T(cfg.tau_ref));
        parts.total = add(tape, parts.total, scalar_mul(tape, parts.ref, lambda_r));
    }
    return parts;
}

// Direct loss aggregation baseline: both distillation terms plus the
// classification loss in one stage; lambda_c is taken from config_a.
template <typename T>
StageLossParts<T> dla_loss(GradTape<T>& tape, const DistillBatchOutputs<T>& out,
                           const MethodConfig& cfg_a, const MethodConfig& cfg_b,
                           const AuxHeads<T>* heads_a = nullptr,
                           const AuxHeads<T>* heads_b = nullptr) {
    cfg_a.validate();
    cfg_b.validate();
    StageLossParts<T> parts;
    Tensor<T> la =
        scalar_mul(tape, distill_term(tape, out, cfg_a, heads_a), T(cfg_a.distill_scale));
    Tensor<T> lb =
        scalar_mul(tape, distill_term(tape, out, cfg_b, heads_b), T(cfg_b.distill_scale));
    parts.distill = add(tape, la, lb);
    parts.cls = cross_entropy(tape, out.student_logits, out.labels);
    parts.total = add(tape, parts.distill, scalar_mul(tape, parts.cls, T(cfg_a.lambda_c)));
    return parts;
}

}  // namespace smskd

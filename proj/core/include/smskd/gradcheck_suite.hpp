#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "smskd/gradcheck.hpp"
#include "smskd/losses.hpp"
#include "smskd/models.hpp"
#include "smskd/rng.hpp"

namespace smskd {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
};

namespace detail {

inline Tensor<double> randn(DetRng& rng, Shape shape, double scale = 1.0) {
    Tensor<double> t = Tensor<double>::zeros(std::move(shape));
    for (double& v : t.values()) {
        v = scale * rng.gaussian();
    }
    return t;
}

inline std::vector<int64_t> rand_labels(DetRng& rng, int64_t n, int64_t k) {
    std::vector<int64_t> y(static_cast<size_t>(n));
    for (int64_t& v : y) {
        v = static_cast<int64_t>(rng.next_range(static_cast<uint64_t>(k)));
    }
    return y;
}

// Gradient of a loss w.r.t. one model parameter: the leaf handle is swapped
// into the parameter slot while the graph is built.
inline double check_model_params(Model<double>& model,
                                 const std::function<Tensor<double>(GradTape<double>&)>& loss_fn,
                                 double step) {
    double worst = 0.0;
    for (size_t i = 0; i < model.parameters().size(); ++i) {
        Tensor<double> x0 = model.parameters()[i].second.detached_copy();
        ScalarFn<double> f = [&model, &loss_fn, i](GradTape<double>& tape,
                                                   const Tensor<double>& leaf) {
            Tensor<double> saved = model.parameters()[i].second;
            model.parameters()[i].second = leaf;
            Tensor<double> loss = loss_fn(tape);
            model.parameters()[i].second = saved;
            return loss;
        };
        worst = std::max(worst, check_gradient<double>(f, x0, step));
    }
    return worst;
}

}  // namespace detail

// Runs check_gradient for every loss in the suite at f64, `seeds` random
// draws each, and reports the worst relative error per loss.
inline std::vector<GradCheckResult> run_loss_gradient_suite(int seeds = 10, double step = 1e-5) {
    using detail::rand_labels;
    using detail::randn;
    std::vector<GradCheckResult> results;
    auto record = [&results](const std::string& name, double err) {
        for (GradCheckResult& r : results) {
            if (r.name == name) {
                r.max_rel_err = std::max(r.max_rel_err, err);
                return;
            }
        }
        results.push_back({name, err});
    };

    for (int s = 1; s <= seeds; ++s) {
        DetRng rng(static_cast<uint64_t>(s));
        const int64_t b = 5, k = 5;
        Tensor<double> zt = randn(rng, {b, k}, 1.5);
        Tensor<double> zs0 = randn(rng, {b, k}, 1.5);
        Tensor<double> zr = randn(rng, {b, k}, 1.5);
        std::vector<int64_t> y = rand_labels(rng, b, k);
        const double tau = 4.0;

        record("cross_entropy", check_gradient<double>(
                                    [&](GradTape<double>& tape, const Tensor<double>& x) {
                                        return cross_entropy(tape, x, y);
                                    },
                                    zs0, step));
        record("kd", check_gradient<double>(
                         [&](GradTape<double>& tape, const Tensor<double>& x) {
                             return kd_loss(tape, zt, x, tau);
                         },
                         zs0, step));
        record("dkd", check_gradient<double>(
                          [&](GradTape<double>& tape, const Tensor<double>& x) {
                              return dkd_loss(tape, zt, x, y, tau, 1.0, 2.0);
                          },
                          zs0, step));
        record("ref", check_gradient<double>(
                          [&](GradTape<double>& tape, const Tensor<double>& x) {
                              return ref_loss(tape, x, zr);
                          },
                          zs0, step));
        record("adaref", check_gradient<double>(
                             [&](GradTape<double>& tape, const Tensor<double>& x) {
                                 return adaref_loss(tape, x, zr, y);
                             },
                             zs0, step));

        // FitNets: flat taps through a linear regressor.
        {
            Tensor<double> t_tap = randn(rng, {b, 6});
            Tensor<double> s_tap0 = randn(rng, {b, 4});
            MethodConfig cfg = MethodConfig::defaults(Method::FitNets);
            AuxHeads<double> heads = make_aux_heads<double>(cfg, {{6}}, {{4}},
                                                            static_cast<uint64_t>(100 + s));
            record("fitnets",
                   check_gradient<double>(
                       [&](GradTape<double>& tape, const Tensor<double>& x) {
                           return fitnets_loss(tape, {t_tap}, {x}, heads, false);
                       },
                       s_tap0, step));
            Tensor<double> w0 = heads.heads[0].weight.detached_copy();
            record("fitnets",
                   check_gradient<double>(
                       [&](GradTape<double>& tape, const Tensor<double>& x) {
                           AuxHeads<double> local = heads;
                           local.heads[0].weight = x;
                           return fitnets_loss(tape, {t_tap}, {s_tap0}, local, false);
                       },
                       w0, step));
        }

        // AT: spatial taps with differing channel counts.
        {
            Tensor<double> t_tap = randn(rng, {3, 4, 4, 4});
            Tensor<double> s_tap0 = randn(rng, {3, 2, 4, 4});
            record("at", check_gradient<double>(
                             [&](GradTape<double>& tape, const Tensor<double>& x) {
                                 return at_loss(tape, {t_tap}, {x}, 2.0, false);
                             },
                             s_tap0, step));
        }

        // VID: regressor plus log-variance.
        {
            Tensor<double> t_tap = randn(rng, {b, 6});
            Tensor<double> s_tap0 = randn(rng, {b, 4});
            MethodConfig cfg = MethodConfig::defaults(Method::VID);
            AuxHeads<double> heads = make_aux_heads<double>(cfg, {{6}}, {{4}},
                                                            static_cast<uint64_t>(200 + s));
            for (double& v : heads.heads[0].log_var.values()) {
                v = 0.3 * rng.gaussian();
            }
            record("vid", check_gradient<double>(
                              [&](GradTape<double>& tape, const Tensor<double>& x) {
                                  return vid_loss(tape, {t_tap}, {x}, heads, false);
                              },
                              s_tap0, step));
            Tensor<double> lv0 = heads.heads[0].log_var.detached_copy();
            record("vid", check_gradient<double>(
                              [&](GradTape<double>& tape, const Tensor<double>& x) {
                                  AuxHeads<double> local = heads;
                                  local.heads[0].log_var = x;
                                  return vid_loss(tape, {t_tap}, {s_tap0}, local, false);
                              },
                              lv0, step));
        }

        // Relation losses over embeddings.
        {
            Tensor<double> t_emb = randn(rng, {b, 3});
            Tensor<double> s_emb0 = randn(rng, {b, 3});
            record("rkd", check_gradient<double>(
                              [&](GradTape<double>& tape, const Tensor<double>& x) {
                                  return rkd_loss(tape, t_emb, x, 25.0, 50.0);
                              },
                              s_emb0, step));
            record("pkt", check_gradient<double>(
                              [&](GradTape<double>& tape, const Tensor<double>& x) {
                                  return pkt_loss(tape, t_emb, x);
                              },
                              s_emb0, step));
            record("cc", check_gradient<double>(
                             [&](GradTape<double>& tape, const Tensor<double>& x) {
                                 return cc_loss(tape, t_emb, x);
                             },
                             s_emb0, step));
        }

        // Full stage losses through a 2-layer MLP, 8 samples.
        {
            const int64_t nb = 8, din = 3, nk = 3;
            Model<double> teacher = build_mlp<double>(din, {6}, nk);
            teacher.init_parameters(static_cast<uint64_t>(300 + s));
            teacher.set_trainable(false);
            Model<double> student = build_mlp<double>(din, {4}, nk);
            student.init_parameters(static_cast<uint64_t>(400 + s));
            Model<double> reference = student.snapshot();
            for (auto& [name, p] : reference.parameters()) {
                for (double& v : p.values()) {
                    v += 0.05 * rng.gaussian();
                }
            }
            Tensor<double> x_in = randn(rng, {nb, din});
            std::vector<int64_t> labels = rand_labels(rng, nb, nk);
            MethodConfig kd_cfg = MethodConfig::defaults(Method::KD);

            auto bundle = [&](GradTape<double>& tape, bool with_ref) {
                DistillBatchOutputs<double> out;
                ForwardResult<double> tf = teacher.forward(tape, x_in);
                out.teacher_logits = tf.logits;
                out.teacher_taps = std::move(tf.taps);
                ForwardResult<double> sf = student.forward(tape, x_in);
                out.student_logits = sf.logits;
                out.student_taps = std::move(sf.taps);
                if (with_ref) {
                    out.reference_logits = reference.forward(tape, x_in).logits;
                }
                out.labels = labels;
                out.tau = tau;
                return out;
            };

            record("stage_eq6", detail::check_model_params(
                                    student,
                                    [&](GradTape<double>& tape) {
                                        DistillBatchOutputs<double> out = bundle(tape, false);
                                        return stage_loss(tape, out, kd_cfg, 1, 0.0,
                                                          RefMode::none)
                                            .total;
                                    },
                                    step));
            record("stage_eq7", detail::check_model_params(
                                    student,
                                    [&](GradTape<double>& tape) {
                                        DistillBatchOutputs<double> out = bundle(tape, true);
                                        return stage_loss(tape, out, kd_cfg, 2, 0.5,
                                                          RefMode::adaptive)
                                            .total;
                                    },
                                    step));
            MethodConfig cc_cfg = MethodConfig::defaults(Method::CC);
            record("dla", detail::check_model_params(
                              student,
                              [&](GradTape<double>& tape) {
                                  DistillBatchOutputs<double> out = bundle(tape, false);
                                  return dla_loss(tape, out, kd_cfg, cc_cfg).total;
                              },
                              step));
        }
    }
    return results;
}

}  // namespace smskd

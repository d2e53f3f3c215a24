#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "smskd/gradcheck.hpp"
#include "smskd/losses.hpp"
#include "smskd/rng.hpp"

using namespace smskd;

namespace {

Tensor<double> randn(DetRng& rng, Shape shape, double scale = 1.0) {
    Tensor<double> t = Tensor<double>::zeros(std::move(shape));
    for (double& v : t.values()) {
        v = scale * rng.gaussian();
    }
    return t;
}

std::vector<std::vector<double>> rows_of(const Tensor<double>& t) {
    std::vector<std::vector<double>> rows(static_cast<size_t>(t.dim(0)));
    const int64_t k = t.numel() / t.dim(0);
    for (int64_t i = 0; i < t.dim(0); ++i) {
        rows[static_cast<size_t>(i)].assign(t.values().begin() + i * k,
                                            t.values().begin() + (i + 1) * k);
    }
    return rows;
}

Tensor<double> permute_rows(const Tensor<double>& t, const std::vector<int64_t>& perm) {
    Tensor<double> out = Tensor<double>::zeros(t.shape());
    const int64_t k = t.numel() / t.dim(0);
    for (int64_t i = 0; i < t.dim(0); ++i) {
        std::copy_n(t.values().begin() + perm[static_cast<size_t>(i)] * k, k,
                    out.values().begin() + i * k);
    }
    return out;
}

}  // namespace

TEST_CASE("cross_entropy: uniform, saturated, and oracle-checked") {
    GradTape<double> tape;
    Tensor<double> uniform = Tensor<double>::zeros({3, 10});
    CHECK(cross_entropy(tape, uniform, {1, 5, 9}).item() ==
          doctest::Approx(std::log(10.0)).epsilon(1e-9));

    Tensor<double> confident = Tensor<double>::zeros({1, 4});
    confident.values()[2] = 50.0;
    CHECK(cross_entropy(tape, confident, {2}).item() < 1e-6);

    DetRng rng(31);
    Tensor<double> z = randn(rng, {5, 7}, 2.0);
    std::vector<int64_t> y{0, 3, 6, 2, 2};
    CHECK(cross_entropy(tape, z, y).item() ==
          doctest::Approx(oracle::cross_entropy(rows_of(z), y)).epsilon(1e-10));

    CHECK_THROWS_AS(cross_entropy(tape, z, {0, 3, 6, 2, 9}), ParameterError);
}

TEST_CASE("kd_loss: zero at equality and brute-force oracle values") {
    GradTape<double> tape;
    DetRng rng(32);
    Tensor<double> z = randn(rng, {4, 6});
    Tensor<double> z_student = Tensor<double>::from(z.shape(), z.values());
    CHECK(kd_loss(tape, z, z_student, 4.0).item() == doctest::Approx(0.0).epsilon(1e-12));

    Tensor<double> zt = Tensor<double>::from({1, 2}, {1, 0});
    Tensor<double> zs = Tensor<double>::from({1, 2}, {0, 1});
    // tau = 1: frozen from the summation oracle (= tanh(1/2))
    CHECK(kd_loss(tape, zt, zs, 1.0).item() ==
          doctest::Approx(0.4621171572600098).epsilon(1e-9));
    CHECK(kd_loss(tape, zt, zs, 1.0).item() ==
          doctest::Approx(oracle::kd(rows_of(zt), rows_of(zs), 1.0)).epsilon(1e-12));
    // tau = 2: oracle gives tau^2 * KL(softmax(z/2) pair) = 4 * 0.122459331...
    CHECK(kd_loss(tape, zt, zs, 2.0).item() ==
          doctest::Approx(0.48983732480741825).epsilon(1e-9));
    CHECK(kd_loss(tape, zt, zs, 2.0).item() ==
          doctest::Approx(oracle::kd(rows_of(zt), rows_of(zs), 2.0)).epsilon(1e-12));
}

TEST_CASE("kd_loss: tau^2 scaling identity and teacher detachment") {
    DetRng rng(33);
    for (double tau : {1.0, 2.0, 4.0}) {
        GradTape<double> tape;
        Tensor<double> zt = randn(rng, {3, 5});
        Tensor<double> zs = randn(rng, {3, 5});
        const double kd = kd_loss(tape, zt, zs, tau).item();
        Tensor<double> pt = softmax_tau(tape, zt, tau);
        Tensor<double> ps = softmax_tau(tape, zs, tau);
        const double plain = kl_divergence(tape, pt, ps).item();
        CHECK(kd / (tau * tau) == doctest::Approx(plain).epsilon(1e-9));
    }

    GradTape<double> tape;
    Tensor<double> zt = randn(rng, {2, 3});
    zt.set_requires_grad(true);
    CHECK_THROWS_AS(kd_loss(tape, zt, randn(rng, {2, 3}), 4.0), ContractError);
}

TEST_CASE("kd_loss gradient reaches only the student logits") {
    DetRng rng(34);
    Tensor<double> zt = randn(rng, {3, 4});
    Tensor<double> zs = randn(rng, {3, 4});
    zs.set_requires_grad(true);
    GradTape<double> tape;
    Tensor<double> loss = kd_loss(tape, zt, zs, 4.0);
    tape.backward(loss);
    CHECK_FALSE(zt.requires_grad());
    double grad_norm = 0;
    for (double g : zs.grad()) {
        grad_norm += std::abs(g);
    }
    CHECK(grad_norm > 0);
}

TEST_CASE("dkd_loss: equality, TCKD-only agreement case, contract") {
    GradTape<double> tape;
    DetRng rng(35);
    Tensor<double> z = randn(rng, {3, 6});
    Tensor<double> z_same = Tensor<double>::from(z.shape(), z.values());
    std::vector<int64_t> y{1, 4, 0};
    CHECK(dkd_loss(tape, z, z_same, y, 4.0, 1.0, 8.0).item() ==
          doctest::Approx(0.0).epsilon(1e-12));

    // same target probability, permuted non-target logits: TCKD alone is 0
    Tensor<double> zt = Tensor<double>::from({1, 3}, {2, 1, 0});
    Tensor<double> zs = Tensor<double>::from({1, 3}, {2, 0, 1});
    CHECK(dkd_loss(tape, zt, zs, {0}, 1.0, 1.0, 0.0).item() ==
          doctest::Approx(0.0).epsilon(1e-9));
    CHECK(dkd_loss(tape, zt, zs, {0}, 1.0, 0.0, 1.0).item() > 1e-4);

    Tensor<double> binary = Tensor<double>::from({1, 1}, {3.0});
    CHECK_THROWS_AS(dkd_loss(tape, binary, binary, {0}, 1.0, 1.0, 1.0), ContractError);
}

TEST_CASE("dkd decomposition identity across 100 f64 trials") {
    int trial = 0;
    for (int64_t k : {3, 10, 100}) {
        for (double tau : {1.0, 4.0}) {
            for (int rep = 0; rep < 17; ++rep) {
                DetRng rng(static_cast<uint64_t>(1000 + trial++));
                GradTape<double> tape;
                Tensor<double> zt = randn(rng, {1, k}, 2.0);
                Tensor<double> zs = randn(rng, {1, k}, 2.0);
                std::vector<int64_t> y{
                    static_cast<int64_t>(rng.next_range(static_cast<uint64_t>(k)))};
                const double kd = kd_loss(tape, zt, zs, tau).item();
                const double tckd = dkd_loss(tape, zt, zs, y, tau, 1.0, 0.0).item();
                const double nckd = dkd_loss(tape, zt, zs, y, tau, 0.0, 1.0).item();
                const double pty =
                    oracle::softmax(rows_of(zt)[0], tau)[static_cast<size_t>(y[0])];
                CHECK(kd == doctest::Approx(tckd + (1 - pty) * nckd).epsilon(1e-6));
                // cross-check both components against the brute-force oracle
                CHECK(tckd ==
                      doctest::Approx(oracle::dkd_tckd_row(rows_of(zt)[0], rows_of(zs)[0],
                                                           y[0], tau))
                          .epsilon(1e-8));
                CHECK(nckd ==
                      doctest::Approx(oracle::dkd_nckd_row(rows_of(zt)[0], rows_of(zs)[0],
                                                           y[0], tau))
                          .epsilon(1e-8));
            }
        }
    }
    CHECK(trial >= 100);
}

TEST_CASE("fitnets_loss: exact fit, unit offset, oracle") {
    GradTape<double> tape;
    DetRng rng(36);
    Tensor<double> t_tap = randn(rng, {4, 6});
    MethodConfig cfg = MethodConfig::defaults(Method::FitNets);
    AuxHeads<double> identity_heads = make_aux_heads<double>(cfg, {{6}}, {{6}}, 1);
    CHECK_FALSE(identity_heads.heads[0].weight.defined());

    Tensor<double> same = Tensor<double>::from(t_tap.shape(), t_tap.values());
    CHECK(fitnets_loss(tape, {t_tap}, {same}, identity_heads, false).item() ==
          doctest::Approx(0.0).epsilon(1e-12));

    GradTape<double> tape2;
    Tensor<double> offset = Tensor<double>::from(t_tap.shape(), t_tap.values());
    for (double& v : offset.values()) {
        v += 1.0;
    }
    CHECK(fitnets_loss(tape2, {t_tap}, {offset}, identity_heads, false).item() ==
          doctest::Approx(1.0).epsilon(1e-9));

    GradTape<double> tape3;
    Tensor<double> s_tap = randn(rng, {4, 6});
    double expect = 0;
    for (int64_t i = 0; i < t_tap.numel(); ++i) {
        const double d = t_tap.values()[i] - s_tap.values()[i];
        expect += d * d;
    }
    expect /= static_cast<double>(t_tap.numel());
    CHECK(fitnets_loss(tape3, {t_tap}, {s_tap}, identity_heads, false).item() ==
          doctest::Approx(expect).epsilon(1e-7));
}

TEST_CASE("at_loss: equality, definition collapse, hand-evaluable case") {
    GradTape<double> tape;
    DetRng rng(37);
    Tensor<double> tap = randn(rng, {2, 3, 4, 4});
    Tensor<double> same = Tensor<double>::from(tap.shape(), tap.values());
    CHECK(at_loss(tape, {tap}, {same}, 2.0, false).item() == doctest::Approx(0.0).epsilon(1e-9));

    // single channel: the attention map is the normalized squared map
    GradTape<double> tape2;
    Tensor<double> one = Tensor<double>::from({1, 1, 2, 2}, {1, 0, 0, 0});
    Tensor<double> two = Tensor<double>::from({1, 1, 2, 2}, {0, 1, 0, 0});
    CHECK(at_loss(tape2, {one}, {two}, 2.0, false).item() ==
          doctest::Approx(std::sqrt(2.0)).epsilon(1e-9));

    // channel counts may differ; spatial extents must match
    GradTape<double> tape3;
    Tensor<double> wide = randn(rng, {2, 5, 4, 4});
    CHECK(at_loss(tape3, {wide}, {tap}, 2.0, false).item() >= 0.0);
    Tensor<double> small = randn(rng, {2, 3, 2, 2});
    CHECK_THROWS_AS(at_loss(tape3, {wide}, {small}, 2.0, false), DimensionError);
}

TEST_CASE("vid_loss: exact mean, unit residual, stationary log-variance") {
    DetRng rng(38);
    Tensor<double> t_tap = randn(rng, {4, 5});
    MethodConfig cfg = MethodConfig::defaults(Method::VID);
    AuxHeads<double> heads = make_aux_heads<double>(cfg, {{5}}, {{5}}, 2);
    REQUIRE(heads.heads[0].log_var.defined());
    CHECK_FALSE(heads.heads[0].weight.defined());

    GradTape<double> tape;
    Tensor<double> same = Tensor<double>::from(t_tap.shape(), t_tap.values());
    CHECK(vid_loss(tape, {t_tap}, {same}, heads, false).item() ==
          doctest::Approx(0.0).epsilon(1e-12));

    GradTape<double> tape2;
    Tensor<double> shifted = Tensor<double>::from(t_tap.shape(), t_tap.values());
    for (double& v : shifted.values()) {
        v -= 1.0;
    }
    CHECK(vid_loss(tape2, {t_tap}, {shifted}, heads, false).item() ==
          doctest::Approx(0.5).epsilon(1e-9));

    // 1-D sweep: the minimizing s satisfies exp(2s) = r^2
    const double r = 0.7;
    Tensor<double> resid = Tensor<double>::from(t_tap.shape(), t_tap.values());
    for (double& v : resid.values()) {
        v -= r;
    }
    double best_s = 0, best_v = 1e100;
    for (double s = -1.0; s <= 0.2 + 1e-9; s += 0.02) {
        for (double& v : heads.heads[0].log_var.values()) {
            v = s;
        }
        GradTape<double> sweep;
        const double val = vid_loss(sweep, {t_tap}, {resid}, heads, false).item();
        if (val < best_v) {
            best_v = val;
            best_s = s;
        }
    }
    CHECK(best_s == doctest::Approx(0.5 * std::log(r * r)).epsilon(0.1));
}

TEST_CASE("rkd_loss: similarity invariance, B=2 degeneracy, enumeration oracle") {
    DetRng rng(39);
    Tensor<double> t_emb = randn(rng, {5, 2});

    // rigid motion plus uniform scale of the teacher embedding gives zero
    const double angle = 0.73, scale = 2.5;
    Tensor<double> moved = Tensor<double>::zeros({5, 2});
    for (int64_t i = 0; i < 5; ++i) {
        const double x = t_emb.values()[i * 2], y = t_emb.values()[i * 2 + 1];
        moved.values()[i * 2] = scale * (std::cos(angle) * x - std::sin(angle) * y) + 3.0;
        moved.values()[i * 2 + 1] = scale * (std::sin(angle) * x + std::cos(angle) * y) - 1.0;
    }
    GradTape<double> tape;
    CHECK(rkd_loss(tape, t_emb, moved, 25.0, 50.0).item() ==
          doctest::Approx(0.0).epsilon(1e-7));

    // B = 2: both normalized distances are 1, and the angle term is skipped
    GradTape<double> tape2;
    Tensor<double> t2 = Tensor<double>::from({2, 2}, {0, 0, 1, 0});
    Tensor<double> s2 = Tensor<double>::from({2, 2}, {0, 0, 0, 7});
    RkdFlags flags;
    CHECK(rkd_loss(tape2, t2, s2, 25.0, 50.0, &flags).item() ==
          doctest::Approx(0.0).epsilon(1e-9));
    CHECK(flags.angle_skipped);
    CHECK_FALSE(flags.distance_skipped);

    // collinear triple: frozen hand value w_d * (1/48), angle term zero
    GradTape<double> tape3;
    Tensor<double> t3 = Tensor<double>::from({3, 2}, {0, 0, 1, 0, 2, 0});
    Tensor<double> s3 = Tensor<double>::from({3, 2}, {0, 0, 1, 0, 3, 0});
    const double got = rkd_loss(tape3, t3, s3, 25.0, 50.0).item();
    CHECK(got == doctest::Approx(25.0 / 48.0).epsilon(1e-9));
    CHECK(got == doctest::Approx(oracle::rkd(rows_of(t3), rows_of(s3), 25.0, 50.0))
                     .epsilon(1e-9));

    // random case against exhaustive enumeration
    for (int trial = 0; trial < 5; ++trial) {
        GradTape<double> t;
        Tensor<double> te = randn(rng, {4, 3});
        Tensor<double> se = randn(rng, {4, 3});
        CHECK(rkd_loss(t, te, se, 25.0, 50.0).item() ==
              doctest::Approx(oracle::rkd(rows_of(te), rows_of(se), 25.0, 50.0))
                  .epsilon(1e-7));
    }
}

TEST_CASE("rkd distance term is invariant to uniform positive scaling") {
    DetRng rng(40);
    Tensor<double> t_emb = randn(rng, {4, 2});
    Tensor<double> s_emb = randn(rng, {4, 2});
    GradTape<double> tape;
    const double base = rkd_loss(tape, t_emb, s_emb, 1.0, 0.0).item();
    Tensor<double> scaled = Tensor<double>::from(s_emb.shape(), s_emb.values());
    for (double& v : scaled.values()) {
        v *= 17.3;
    }
    GradTape<double> tape2;
    CHECK(rkd_loss(tape2, t_emb, scaled, 1.0, 0.0).item() ==
          doctest::Approx(base).epsilon(1e-7));
}

TEST_CASE("pkt_loss: equality, per-sample scale invariance, oracle") {
    DetRng rng(41);
    Tensor<double> t_emb = randn(rng, {3, 4});
    Tensor<double> same = Tensor<double>::from(t_emb.shape(), t_emb.values());
    GradTape<double> tape;
    CHECK(pkt_loss(tape, t_emb, same).item() == doctest::Approx(0.0).epsilon(1e-10));

    Tensor<double> s_emb = randn(rng, {3, 4});
    GradTape<double> tape2;
    const double base = pkt_loss(tape2, t_emb, s_emb).item();
    Tensor<double> rescaled = Tensor<double>::from(s_emb.shape(), s_emb.values());
    const double factors[3] = {0.2, 5.0, 1.7};
    for (int64_t i = 0; i < 3; ++i) {
        for (int64_t d = 0; d < 4; ++d) {
            rescaled.values()[i * 4 + d] *= factors[i];
        }
    }
    GradTape<double> tape3;
    CHECK(pkt_loss(tape3, t_emb, rescaled).item() == doctest::Approx(base).epsilon(1e-7));
    CHECK(base == doctest::Approx(oracle::pkt(rows_of(t_emb), rows_of(s_emb))).epsilon(1e-7));
}

TEST_CASE("cc_loss: equality, hand case, oracle") {
    GradTape<double> tape;
    DetRng rng(42);
    Tensor<double> t_emb = randn(rng, {4, 3});
    Tensor<double> same = Tensor<double>::from(t_emb.shape(), t_emb.values());
    CHECK(cc_loss(tape, t_emb, same).item() == doctest::Approx(0.0).epsilon(1e-12));

    GradTape<double> tape2;
    Tensor<double> ortho = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
    Tensor<double> dup = Tensor<double>::from({2, 2}, {3, 3, 3, 3});
    CHECK(cc_loss(tape2, ortho, dup).item() == doctest::Approx(0.5).epsilon(1e-9));

    GradTape<double> tape3;
    Tensor<double> s_emb = randn(rng, {4, 3});
    CHECK(cc_loss(tape3, t_emb, s_emb).item() ==
          doctest::Approx(oracle::cc(rows_of(t_emb), rows_of(s_emb))).epsilon(1e-9));
}

TEST_CASE("ref_loss: equality, direction asymmetry, closed-form uniform case") {
    GradTape<double> tape;
    DetRng rng(43);
    Tensor<double> z = randn(rng, {3, 4});
    Tensor<double> same = Tensor<double>::from(z.shape(), z.values());
    CHECK(ref_loss(tape, same, z).item() == doctest::Approx(0.0).epsilon(1e-12));

    // KL(pS || pR) and KL(pR || pS) differ on the asymmetric pair [2,0]/[0,1]
    Tensor<double> za = Tensor<double>::from({1, 2}, {2, 0});
    Tensor<double> zb = Tensor<double>::from({1, 2}, {0, 1});
    const double forward_dir = ref_loss(tape, za, zb).item();
    const double reverse_dir = ref_loss(tape, zb, za).item();
    CHECK(std::abs(forward_dir - reverse_dir) > 1e-3);
    CHECK(forward_dir ==
          doctest::Approx(oracle::kl_row(oracle::softmax({2, 0}, 1), oracle::softmax({0, 1}, 1)))
              .epsilon(1e-10));

    // uniform student: sum_k (1/K) ln((1/K)/p_k)
    const int64_t k = 5;
    Tensor<double> zu = Tensor<double>::zeros({1, k});
    Tensor<double> zr = randn(rng, {1, k});
    const auto pr = oracle::softmax(rows_of(zr)[0], 1.0);
    double expect = 0;
    for (double p : pr) {
        expect += (1.0 / k) * std::log((1.0 / k) / p);
    }
    CHECK(ref_loss(tape, zu, zr).item() == doctest::Approx(expect).epsilon(1e-9));

    Tensor<double> undefined_ref;
    CHECK_THROWS_AS(ref_loss(tape, zu, undefined_ref), ContractError);
}

TEST_CASE("adaref_loss: TCP weighting, equality, bound vs ref_loss") {
    GradTape<double> tape;
    // reference puts (numerically) zero mass on the true class
    Tensor<double> zr = Tensor<double>::from({1, 3}, {0.0, -800.0, 5.0});
    Tensor<double> zs = Tensor<double>::from({1, 3}, {3.0, 1.0, -2.0});
    CHECK(adaref_loss(tape, zs, zr, {1}).item() == doctest::Approx(0.0).epsilon(1e-12));

    DetRng rng(44);
    Tensor<double> z = randn(rng, {3, 4});
    Tensor<double> same = Tensor<double>::from(z.shape(), z.values());
    CHECK(adaref_loss(tape, same, z, {0, 1, 2}).item() == doctest::Approx(0.0).epsilon(1e-12));

    // B=1, reference probs [0.1, 0.7, 0.2], y=1, uniform student
    Tensor<double> zr2 = Tensor<double>::from(
        {1, 3}, {std::log(0.1), std::log(0.7), std::log(0.2)});
    Tensor<double> zu = Tensor<double>::zeros({1, 3});
    const double expect =
        0.7 * oracle::kl_row({1.0 / 3, 1.0 / 3, 1.0 / 3}, {0.1, 0.7, 0.2});
    CHECK(adaref_loss(tape, zu, zr2, {1}).item() == doctest::Approx(expect).epsilon(1e-9));

    // adaref <= ref since TCP is in [0,1] and per-row KL >= 0
    for (int trial = 0; trial < 20; ++trial) {
        GradTape<double> t;
        Tensor<double> s = randn(rng, {4, 5});
        Tensor<double> r = randn(rng, {4, 5});
        std::vector<int64_t> y{0, 1, 2, 3};
        CHECK(adaref_loss(t, s, r, y).item() <= ref_loss(t, s, r).item() + 1e-9);
    }
}

TEST_CASE("batch permutation leaves every loss unchanged") {
    DetRng rng(45);
    const int64_t b = 5, k = 4;
    Tensor<double> zt = randn(rng, {b, k});
    Tensor<double> zs = randn(rng, {b, k});
    Tensor<double> zr = randn(rng, {b, k});
    Tensor<double> et = randn(rng, {b, 3});
    Tensor<double> es = randn(rng, {b, 3});
    std::vector<int64_t> y{0, 1, 2, 3, 0};
    std::vector<int64_t> perm{3, 0, 4, 1, 2};
    Tensor<double> pzt = permute_rows(zt, perm);
    Tensor<double> pzs = permute_rows(zs, perm);
    Tensor<double> pzr = permute_rows(zr, perm);
    Tensor<double> pet = permute_rows(et, perm);
    Tensor<double> pes = permute_rows(es, perm);
    std::vector<int64_t> py(y.size());
    for (size_t i = 0; i < y.size(); ++i) {
        py[i] = y[perm[i]];
    }

    GradTape<double> t;
    CHECK(kd_loss(t, zt, zs, 4.0).item() ==
          doctest::Approx(kd_loss(t, pzt, pzs, 4.0).item()).epsilon(1e-7));
    CHECK(cross_entropy(t, zs, y).item() ==
          doctest::Approx(cross_entropy(t, pzs, py).item()).epsilon(1e-7));
    CHECK(dkd_loss(t, zt, zs, y, 4.0, 1.0, 2.0).item() ==
          doctest::Approx(dkd_loss(t, pzt, pzs, py, 4.0, 1.0, 2.0).item()).epsilon(1e-7));
    CHECK(adaref_loss(t, zs, zr, y).item() ==
          doctest::Approx(adaref_loss(t, pzs, pzr, py).item()).epsilon(1e-7));
    CHECK(rkd_loss(t, et, es, 25.0, 50.0).item() ==
          doctest::Approx(rkd_loss(t, pet, pes, 25.0, 50.0).item()).epsilon(1e-7));
    CHECK(pkt_loss(t, et, es).item() ==
          doctest::Approx(pkt_loss(t, pet, pes).item()).epsilon(1e-7));
    CHECK(cc_loss(t, et, es).item() ==
          doctest::Approx(cc_loss(t, pet, pes).item()).epsilon(1e-7));
}

TEST_CASE("stage_loss composition rules") {
    DetRng rng(46);
    const int64_t b = 4, k = 3;
    DistillBatchOutputs<double> out;
    out.teacher_logits = randn(rng, {b, k});
    out.student_logits = randn(rng, {b, k});
    out.reference_logits = randn(rng, {b, k});
    out.labels = {0, 1, 2, 1};
    out.tau = 4.0;
    MethodConfig kd_cfg = MethodConfig::defaults(Method::KD);

    // lambda_r = 0 at stage 2 equals the initial-stage composition bit for bit
    GradTape<double> t1;
    const double stage2 =
        stage_loss(t1, out, kd_cfg, 2, 0.0, RefMode::adaptive).total.item();
    GradTape<double> t2;
    const double stage1 = stage_loss(t2, out, kd_cfg, 1, 0.0, RefMode::none).total.item();
    CHECK(stage2 == stage1);

    // stage 1 with lambda_c = 0 is the pure distillation loss
    MethodConfig no_cls = kd_cfg;
    no_cls.lambda_c = 0.0;
    GradTape<double> t3;
    StageLossParts<double> parts = stage_loss(t3, out, no_cls, 1, 0.0, RefMode::none);
    CHECK(parts.total.item() ==
          doctest::Approx(kd_loss(t3, out.teacher_logits, out.student_logits, 4.0).item())
              .epsilon(1e-12));

    // the reference term contributes lambda_r * adaref
    GradTape<double> t4;
    StageLossParts<double> with_ref = stage_loss(t4, out, kd_cfg, 2, 0.5, RefMode::adaptive);
    const double adaref =
        adaref_loss(t4, out.student_logits, out.reference_logits, out.labels).item();
    CHECK(with_ref.total.item() ==
          doctest::Approx(stage1 + 0.5 * adaref).epsilon(1e-12));
    // plain mode swaps in the unweighted reference KL
    GradTape<double> t5;
    StageLossParts<double> plain = stage_loss(t5, out, kd_cfg, 2, 0.5, RefMode::plain);
    const double plain_ref =
        ref_loss(t5, out.student_logits, out.reference_logits).item();
    CHECK(plain.total.item() == doctest::Approx(stage1 + 0.5 * plain_ref).epsilon(1e-12));

    // missing reference
    DistillBatchOutputs<double> no_ref = out;
    no_ref.reference_logits = Tensor<double>();
    GradTape<double> t6;
    CHECK_THROWS_AS(stage_loss(t6, no_ref, kd_cfg, 2, 0.5, RefMode::adaptive), ContractError);
    CHECK_THROWS_AS(stage_loss(t6, out, kd_cfg, 0, 0.0, RefMode::none), ContractError);
}

TEST_CASE("stage 2 AT+KD composite passes the gradient check on a tiny conv pair") {
    DetRng rng(47);
    Model<double> teacher = build_tinyconv<double>(1, 4, 4, {3, 4}, 3);
    teacher.init_parameters(71);
    teacher.set_trainable(false);
    Model<double> student = build_tinyconv<double>(1, 4, 4, {2, 3}, 3);
    student.init_parameters(72);
    Model<double> reference = student.snapshot();
    for (auto& [name, p] : reference.parameters()) {
        for (double& v : p.values()) {
            v += 0.05 * rng.gaussian();
        }
    }
    Tensor<double> x_in = randn(rng, {8, 1, 4, 4});
    std::vector<int64_t> labels{0, 1, 2, 0, 1, 2, 0, 1};
    MethodConfig at_cfg = MethodConfig::defaults(Method::AT);

    double worst = 0;
    for (size_t pi = 0; pi < student.parameters().size(); ++pi) {
        Tensor<double> x0 = student.parameters()[pi].second.detached_copy();
        const double err = check_gradient<double>(
            [&](GradTape<double>& tape, const Tensor<double>& leaf) {
                Tensor<double> saved = student.parameters()[pi].second;
                student.parameters()[pi].second = leaf;
                DistillBatchOutputs<double> out;
                ForwardResult<double> tf = teacher.forward(tape, x_in);
                out.teacher_logits = tf.logits;
                out.teacher_taps = std::move(tf.taps);
                ForwardResult<double> sf = student.forward(tape, x_in);
                out.student_logits = sf.logits;
                out.student_taps = std::move(sf.taps);
                out.reference_logits = reference.forward(tape, x_in).logits;
                out.labels = labels;
                out.tau = 4.0;
                Tensor<double> loss =
                    stage_loss(tape, out, at_cfg, 2, 0.5, RefMode::adaptive).total;
                student.parameters()[pi].second = saved;
                return loss;
            },
            x0, 1e-5);
        worst = std::max(worst, err);
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("dla_loss linearity and recomputation") {
    DetRng rng(48);
    const int64_t b = 4, k = 3;
    DistillBatchOutputs<double> out;
    out.teacher_logits = randn(rng, {b, k});
    out.student_logits = randn(rng, {b, k});
    out.teacher_taps = {randn(rng, {b, 5})};
    out.student_taps = {randn(rng, {b, 5})};
    out.labels = {0, 1, 2, 1};
    out.tau = 4.0;
    MethodConfig kd_cfg = MethodConfig::defaults(Method::KD);

    // both constituent losses zero -> lambda_c * cls only
    DistillBatchOutputs<double> same = out;
    same.student_logits = Tensor<double>::from(out.teacher_logits.shape(),
                                               out.teacher_logits.values());
    GradTape<double> t0;
    CHECK(dla_loss(t0, same, kd_cfg, kd_cfg).total.item() ==
          doctest::Approx(cross_entropy(t0, same.student_logits, same.labels).item())
              .epsilon(1e-12));

    // dla(KD, KD) = 2 * kd + lambda_c * cls, exactly
    GradTape<double> t1;
    const double dla_kk = dla_loss(t1, out, kd_cfg, kd_cfg).total.item();
    MethodConfig doubled = kd_cfg;
    doubled.distill_scale = 2.0;
    GradTape<double> t2;
    CHECK(dla_kk == stage_loss(t2, out, doubled, 1, 0.0, RefMode::none).total.item());

    // random mixed pair equals the sum of independently computed terms
    MethodConfig cc_cfg = MethodConfig::defaults(Method::CC);
    GradTape<double> t3;
    const double got = dla_loss(t3, out, kd_cfg, cc_cfg).total.item();
    GradTape<double> t4;
    const double kd = kd_loss(t4, out.teacher_logits, out.student_logits, 4.0).item();
    const double cc = cc_loss(t4, out.teacher_taps[0], out.student_taps[0]).item();
    const double ce = cross_entropy(t4, out.student_logits, out.labels).item();
    CHECK(got == doctest::Approx(kd + 0.02 * cc + ce).epsilon(1e-9));
}

TEST_CASE("zero-at-equality across the whole suite") {
    DetRng rng(49);
    const int64_t b = 4, k = 5;
    Tensor<double> z = randn(rng, {b, k});
    Tensor<double> z2 = Tensor<double>::from(z.shape(), z.values());
    Tensor<double> tap = randn(rng, {b, 2, 4, 4});
    Tensor<double> tap2 = Tensor<double>::from(tap.shape(), tap.values());
    Tensor<double> emb = randn(rng, {b, 6});
    Tensor<double> emb2 = Tensor<double>::from(emb.shape(), emb.values());
    std::vector<int64_t> y{1, 0, 3, 2};
    MethodConfig fit_cfg = MethodConfig::defaults(Method::FitNets);
    AuxHeads<double> fit_heads = make_aux_heads<double>(fit_cfg, {{2, 4, 4}}, {{2, 4, 4}}, 3);
    MethodConfig vid_cfg = MethodConfig::defaults(Method::VID);
    AuxHeads<double> vid_heads = make_aux_heads<double>(vid_cfg, {{2, 4, 4}}, {{2, 4, 4}}, 4);

    GradTape<double> t;
    CHECK(kd_loss(t, z, z2, 4.0).item() <= 1e-7);
    CHECK(dkd_loss(t, z, z2, y, 4.0, 1.0, 8.0).item() <= 1e-7);
    CHECK(fitnets_loss(t, {tap}, {tap2}, fit_heads, false).item() <= 1e-7);
    CHECK(at_loss(t, {tap}, {tap2}, 2.0, false).item() <= 1e-7);
    CHECK(vid_loss(t, {tap}, {tap2}, vid_heads, false).item() <= 1e-7);
    CHECK(rkd_loss(t, emb, emb2, 25.0, 50.0).item() <= 1e-7);
    CHECK(pkt_loss(t, emb, emb2).item() <= 1e-7);
    CHECK(cc_loss(t, emb, emb2).item() <= 1e-7);
    CHECK(ref_loss(t, z2, z).item() <= 1e-7);
    CHECK(adaref_loss(t, z2, z, y).item() <= 1e-7);
}

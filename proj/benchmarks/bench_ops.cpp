#include <benchmark/benchmark.h>

#include "smskd/models.hpp"
#include "smskd/ops.hpp"
#include "smskd/rng.hpp"

using namespace smskd;

namespace {

Tensor<float> randn(DetRng& rng, Shape shape) {
    Tensor<float> t = Tensor<float>::zeros(std::move(shape));
    for (float& v : t.values()) {
        v = static_cast<float>(rng.gaussian());
    }
    return t;
}

void BM_Conv2dForward(benchmark::State& state) {
    DetRng rng(1);
    Tensor<float> x = randn(rng, {64, 16, 8, 8});
    Tensor<float> w = randn(rng, {32, 16, 3, 3});
    for (auto _ : state) {
        GradTape<float> tape;
        benchmark::DoNotOptimize(conv2d(tape, x, w));
    }
}
BENCHMARK(BM_Conv2dForward);

void BM_MatmulNT(benchmark::State& state) {
    const int64_t n = state.range(0);
    DetRng rng(2);
    Tensor<float> a = randn(rng, {64, n});
    Tensor<float> b = randn(rng, {n, n});
    for (auto _ : state) {
        GradTape<float> tape;
        benchmark::DoNotOptimize(matmul_nt(tape, a, b));
    }
}
BENCHMARK(BM_MatmulNT)->Arg(64)->Arg(256);

void BM_SoftmaxBackward(benchmark::State& state) {
    DetRng rng(3);
    Tensor<float> z = randn(rng, {64, 100});
    for (auto _ : state) {
        Tensor<float> leaf = z.detached_copy();
        leaf.set_requires_grad(true);
        GradTape<float> tape;
        Tensor<float> loss = mean_all(tape, square(tape, softmax_tau(tape, leaf, 4.0f)));
        tape.backward(loss);
        benchmark::DoNotOptimize(leaf.grad().data());
    }
}
BENCHMARK(BM_SoftmaxBackward);

void BM_TinyconvTrainStep(benchmark::State& state) {
    DetRng rng(4);
    Model<float> model = build_tinyconv<float>(1, 8, 8, {4, 8}, 10);
    model.init_parameters(7);
    Tensor<float> x = randn(rng, {64, 1, 8, 8});
    for (auto _ : state) {
        GradTape<float> tape;
        ForwardResult<float> out = model.forward(tape, x);
        Tensor<float> loss = mean_all(tape, square(tape, out.logits));
        for (auto& [name, p] : model.parameters()) {
            p.zero_grad();
        }
        tape.backward(loss);
        benchmark::DoNotOptimize(model.parameters().front().second.grad().data());
    }
}
BENCHMARK(BM_TinyconvTrainStep);

}  // namespace

BENCHMARK_MAIN();

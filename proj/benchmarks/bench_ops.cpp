#include <benchmark/benchmark.h>

#include "charbench/network.hpp"
#include "charbench/ops.hpp"

using namespace charbench;

namespace {

Tensor random_tensor(Shape shape, uint64_t seed, bool requires_grad = false) {
    Rng rng(seed);
    std::vector<float> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

void BM_conv2d_forward(benchmark::State& state) {
    const int ch = static_cast<int>(state.range(0));
    Tensor x = random_tensor({8, ch, 32, 32}, 1);
    Tensor w = random_tensor({ch, ch, 3, 3}, 2);
    Tensor b = random_tensor({ch}, 3);
    for (auto _ : state) {
        Tensor y = conv2d(nullptr, x, w, b, {1, 1}, {1, 1});
        benchmark::DoNotOptimize(y.data().data());
    }
    state.SetItemsProcessed(state.iterations() * x.numel());
}
BENCHMARK(BM_conv2d_forward)->Arg(16)->Arg(48);

void BM_conv2d_train_step(benchmark::State& state) {
    Tensor x = random_tensor({8, 16, 32, 32}, 1);
    Tensor w = random_tensor({16, 16, 3, 3}, 2, true);
    Tensor b = random_tensor({16}, 3, true);
    for (auto _ : state) {
        Tape tape;
        Tensor loss = sum(&tape, conv2d(&tape, x, w, b, {1, 1}, {1, 1}));
        backward(loss, tape);
        w.zero_grad();
        b.zero_grad();
    }
}
BENCHMARK(BM_conv2d_train_step);

void BM_linear_forward(benchmark::State& state) {
    Tensor x = random_tensor({32, 1024}, 1);
    Tensor w = random_tensor({1024, 1024}, 2);
    Tensor b = random_tensor({1024}, 3);
    for (auto _ : state) {
        Tensor y = linear(nullptr, x, w, b);
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_linear_forward);

void BM_batchnorm_train(benchmark::State& state) {
    Tensor x = random_tensor({16, 32, 16, 16}, 1);
    Tensor gamma(Shape{32}, 1.0f), beta(Shape{32}, 0.0f);
    BatchNormStats stats{Tensor(Shape{32}, 0.0f), Tensor(Shape{32}, 1.0f)};
    for (auto _ : state) {
        Tensor y = batchnorm2d(nullptr, x, gamma, beta, stats, Phase::train);
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_batchnorm_train);

void BM_maxpool(benchmark::State& state) {
    Tensor x = random_tensor({16, 32, 32, 32}, 1);
    for (auto _ : state) {
        Tensor y = maxpool2d(nullptr, x, {3, 3}, {2, 2});
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_maxpool);

void BM_mini_forward(benchmark::State& state) {
    static const Model model(zoo_spec("alexnet", Scale::mini, 10), 1);
    Tensor x = random_tensor({32, 3, 64, 64}, 4);
    for (auto _ : state) {
        Tensor y = model.forward(nullptr, x, Phase::eval);
        benchmark::DoNotOptimize(y.data().data());
    }
    state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_mini_forward);

} // namespace

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "ftk/ops.hpp"
#include "ftk/rng.hpp"

namespace {

ftk::Tensor random_tensor(ftk::Shape shape, std::uint64_t seed) {
    ftk::Tensor t(std::move(shape));
    ftk::SplitMix64 rng(seed);
    for (auto& v : t.span<float>()) {
        v = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    return t;
}

// Args: batch, channels in, channels out, spatial extent.
void BM_Conv2dForward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto cin = static_cast<std::size_t>(state.range(1));
    const auto cout = static_cast<std::size_t>(state.range(2));
    const auto hw = static_cast<std::size_t>(state.range(3));
    const ftk::Var x(random_tensor({n, cin, hw, hw}, 1));
    const ftk::Var w(random_tensor({cout, cin, 3, 3}, 2));
    for (auto _ : state) {
        auto y = ftk::conv2d(x, w, std::nullopt, {1, 1});
        benchmark::DoNotOptimize(y.value().bytes().data());
    }
    state.counters["GFLOP/s"] = benchmark::Counter(2.0 * n * cout * hw * hw * cin * 9 * 1e-9,
                                                   benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv2dForward)->Args({16, 32, 32, 64})->Args({16, 64, 64, 32})->Args({16, 128, 128, 16})
    ->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto c = static_cast<std::size_t>(state.range(1));
    const auto hw = static_cast<std::size_t>(state.range(2));
    ftk::Var x(random_tensor({n, c, hw, hw}, 3), true);
    ftk::Var w(random_tensor({c, c, 3, 3}, 4), true);
    for (auto _ : state) {
        auto loss = ftk::sum(ftk::conv2d(x, w, std::nullopt, {1, 1}));
        loss.backward();
        benchmark::DoNotOptimize(w.grad()->bytes().data());
    }
    state.counters["GFLOP/s"] = benchmark::Counter(3 * 2.0 * n * c * hw * hw * c * 9 * 1e-9,
                                                   benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv2dBackward)->Args({16, 32, 64})->Args({16, 64, 32})->Unit(benchmark::kMillisecond);

void BM_MaxPool(benchmark::State& state) {
    const ftk::Var x(random_tensor({16, 64, 32, 32}, 5));
    for (auto _ : state) {
        auto y = ftk::maxpool2d(x, 2, 2);
        benchmark::DoNotOptimize(y.value().bytes().data());
    }
}
BENCHMARK(BM_MaxPool)->Unit(benchmark::kMicrosecond);

} // namespace

BENCHMARK_MAIN();

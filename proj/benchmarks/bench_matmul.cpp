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

void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const ftk::Var a(random_tensor({n, n}, 1));
    const ftk::Var b(random_tensor({n, n}, 2));
    for (auto _ : state) {
        auto c = ftk::matmul(a, b);
        benchmark::DoNotOptimize(c.value().bytes().data());
    }
    state.counters["GFLOP/s"] =
        benchmark::Counter(2.0 * n * n * n * 1e-9, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256)->Arg(512)->Unit(benchmark::kMicrosecond);

// The head's first layer at mini_vgg feature width.
void BM_LinearHead(benchmark::State& state) {
    const ftk::Var x(random_tensor({64, 8192}, 3));
    ftk::Var w(random_tensor({512, 8192}, 4), true);
    ftk::Var bias(random_tensor({512}, 5), true);
    for (auto _ : state) {
        auto loss = ftk::sum(ftk::linear(x, w, bias));
        loss.backward();
        benchmark::DoNotOptimize(w.grad()->bytes().data());
    }
}
BENCHMARK(BM_LinearHead)->Unit(benchmark::kMillisecond);

} // namespace

#include <benchmark/benchmark.h>

#include "ftk/augment.hpp"
#include "ftk/rng.hpp"

namespace {

ftk::Tensor random_image(std::size_t size) {
    ftk::Tensor t({3, size, size});
    ftk::SplitMix64 rng(7);
    for (auto& v : t.span<float>()) {
        v = static_cast<float>(rng.uniform());
    }
    return t;
}

void BM_DefaultPipeline(benchmark::State& state) {
    const auto image = random_image(64);
    const auto pipeline = ftk::default_pipeline(64, 1);
    std::uint64_t index = 0;
    for (auto _ : state) {
        auto out = ftk::augment(image, pipeline, 0, index++);
        benchmark::DoNotOptimize(out.bytes().data());
    }
}
BENCHMARK(BM_DefaultPipeline)->Unit(benchmark::kMicrosecond);

void BM_GaussianBlur(benchmark::State& state) {
    const auto image = random_image(64);
    const double sigma = static_cast<double>(state.range(0)) / 10.0;
    for (auto _ : state) {
        auto out = ftk::gaussian_blur(image, sigma);
        benchmark::DoNotOptimize(out.bytes().data());
    }
}
BENCHMARK(BM_GaussianBlur)->Arg(1)->Arg(5)->Arg(10)->Unit(benchmark::kMicrosecond);

void BM_ResizeTo224(benchmark::State& state) {
    const auto image = random_image(64);
    for (auto _ : state) {
        auto out = ftk::resize_bilinear(image, 224, 224);
        benchmark::DoNotOptimize(out.bytes().data());
    }
}
BENCHMARK(BM_ResizeTo224)->Unit(benchmark::kMicrosecond);

} // namespace

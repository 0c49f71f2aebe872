#include <benchmark/benchmark.h>

#include <acar/ops.hpp>
#include <acar/roi.hpp>

using namespace acar;

namespace {

TensorPtr random_tensor(const Shape& shape, std::uint64_t seed) {
    auto t = zeros<float>(shape);
    fill_uniform(*t, -1.0f, 1.0f, seed);
    return t;
}

}  // namespace

static void BM_Conv2dBackboneLayer(benchmark::State& state) {
    // 16-frame batch, 16->32 channels, stride 2 on 16x16: the middle toy
    // backbone layer.
    auto x = random_tensor({16, 16, 16, 16}, 1);
    auto w = random_tensor({32, 16, 3, 3}, 2);
    auto b = random_tensor({32}, 3);
    for (auto _ : state) {
        auto y = conv2d(x, w, b, 2, 1);
        benchmark::DoNotOptimize(y->data.data());
    }
}
BENCHMARK(BM_Conv2dBackboneLayer)->Unit(benchmark::kMicrosecond);

static void BM_Conv2dRelationEncoder(benchmark::State& state) {
    auto x = random_tensor({3, 128, 8, 8}, 4);
    auto w = random_tensor({64, 128, 3, 3}, 5);
    auto b = random_tensor({64}, 6);
    for (auto _ : state) {
        auto y = conv2d(x, w, b, 1, 1);
        benchmark::DoNotOptimize(y->data.data());
    }
}
BENCHMARK(BM_Conv2dRelationEncoder)->Unit(benchmark::kMicrosecond);

static void BM_Conv2dForwardBackward(benchmark::State& state) {
    auto w = random_tensor({32, 16, 3, 3}, 7);
    auto b = random_tensor({32}, 8);
    w->requires_grad = true;
    b->requires_grad = true;
    for (auto _ : state) {
        auto x = random_tensor({16, 16, 16, 16}, 9);
        x->requires_grad = true;
        auto loss = sum_all(conv2d(x, w, b, 2, 1));
        loss->backward();
        benchmark::DoNotOptimize(loss->data.data());
    }
}
BENCHMARK(BM_Conv2dForwardBackward)->Unit(benchmark::kMicrosecond);

static void BM_RoiAlign(benchmark::State& state) {
    auto feat = random_tensor({64, 8, 8}, 10);
    DetectionBox box{0.2, 0.3, 0.7, 0.9};
    for (auto _ : state) {
        auto roi = roi_align(feat, box, 7, 7, 2);
        benchmark::DoNotOptimize(roi->data.data());
    }
}
BENCHMARK(BM_RoiAlign)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include <random>

#include "vodet/datamodel.hpp"
#include "vodet/detector.hpp"
#include "vodet/flow.hpp"
#include "vodet/tensor.hpp"

namespace {

vodet::Tensor random_tensor(std::vector<int> dims, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    vodet::Tensor t(std::move(dims));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = d(rng);
    return t;
}

void BM_WarpFeatures(benchmark::State& state) {
    using namespace vodet;
    NoGradGuard ng;
    const int hw = static_cast<int>(state.range(0));
    FeatureMap f{make_var(random_tensor({32, hw, hw}, 1)), 8};
    FlowField flow{make_var(random_tensor({2, hw, hw}, 2)), 8};
    for (auto _ : state) benchmark::DoNotOptimize(warp_features(f, flow).data->value.data());
}
BENCHMARK(BM_WarpFeatures)->Arg(8)->Arg(32)->Arg(80);

void BM_Conv3x3(benchmark::State& state) {
    using namespace vodet;
    NoGradGuard ng;
    const int hw = static_cast<int>(state.range(0));
    Var x = make_var(random_tensor({32, hw, hw}, 3));
    Var w = make_var(random_tensor({32, 32, 3, 3}, 4));
    Var b = make_var(random_tensor({32}, 5));
    for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, 1, 1)->value.data());
}
BENCHMARK(BM_Conv3x3)->Arg(8)->Arg(32)->Arg(80);

void BM_Nms(benchmark::State& state) {
    using namespace vodet;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Detection> dets;
    for (int i = 0; i < state.range(0); ++i) {
        double x0 = u(rng) * 60, y0 = u(rng) * 60;
        dets.push_back(Detection{BoundingBox{x0, y0, x0 + 2 + u(rng) * 10, y0 + 2 + u(rng) * 10},
                                 static_cast<int>(rng() % 3), u(rng)});
    }
    PostprocessConfig cfg;
    for (auto _ : state) benchmark::DoNotOptimize(nms(dets, cfg).size());
}
BENCHMARK(BM_Nms)->Arg(30)->Arg(300);

void BM_DetectDesk(benchmark::State& state) {
    using namespace vodet;
    const int n = static_cast<int>(state.range(0));
    DetectionModel model(ModelConfig::desk(n), 42);
    std::vector<Frame> clip;
    for (int t = 0; t < 2 * n + 1; ++t) {
        Frame f;
        f.image = random_tensor({3, 64, 64}, static_cast<unsigned>(100 + t));
        for (std::size_t i = 0; i < f.image.size(); ++i)
            f.image[i] = std::abs(f.image[i]);
        f.timestamp_index = t;
        clip.push_back(std::move(f));
    }
    FrameWindow w = make_window(clip, n, n);
    for (auto _ : state) benchmark::DoNotOptimize(model.detect(w).size());
}
BENCHMARK(BM_DetectDesk)->Arg(0)->Arg(2);

}  // namespace

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "lrod/lipschitz.hpp"
#include "lrod/losses.hpp"
#include "lrod/models.hpp"
#include "lrod/ops.hpp"
#include "lrod/rng.hpp"

using namespace lrod;

namespace {

void BM_Conv2dForwardBackward(benchmark::State& state) {
    const std::size_t c = static_cast<std::size_t>(state.range(0));
    const Tensor x = Rng(1).normal_tensor({16, c, 32, 32});
    const Tensor w = Rng(2).normal_tensor({c, c, 3, 3}, 0.1);
    for (auto _ : state) {
        ad::Tape t;
        const ad::Var xv = t.leaf(x), wv = t.leaf(w);
        const ad::Var y = ops::sum(ops::square(ops::conv2d(xv, wv, 1, 1)));
        const ad::Var wrt[] = {xv, wv};
        benchmark::DoNotOptimize(ad::gradient(y, wrt));
    }
    state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_DetectorTrainStep(benchmark::State& state) {
    const ModelConfig cfg;
    const ModelParams p = init_params(detector_layout(cfg), 3, cfg);
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const Tensor x = Rng(4).normal_tensor({n, 3, 64, 64});
    std::vector<std::vector<BoxLabel>> labels(n, {BoxLabel{0, Box{10, 10, 30, 30}}});
    const DetectionTargets tg = assign_targets(labels, 64, 64, cfg);
    for (auto _ : state) {
        ad::Tape t;
        const BoundParams b = bind(t, p);
        const ad::Var loss = detection_loss(detector_forward(b, t.constant(x), cfg), tg);
        benchmark::DoNotOptimize(ad::gradient(loss, b.vars()));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_DetectorTrainStep)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_InputSpectralNorm(benchmark::State& state) {
    const ModelConfig cfg;
    const ModelParams p = init_params(detector_layout(cfg), 5, cfg);
    const ModelFn f = detector_fn(p, cfg);
    Tensor x = Rng(6).normal_tensor({1, 3, 64, 64}, 0.1);
    for (double& v : x.data()) v += 0.5;
    PowerOptions opt;
    opt.max_iters = static_cast<std::size_t>(state.range(0));
    opt.tol = 1e-300;  // run every iteration
    for (auto _ : state) benchmark::DoNotOptimize(input_spectral_norm(f, x, opt).sigma);
}
BENCHMARK(BM_InputSpectralNorm)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

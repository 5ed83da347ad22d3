#include <benchmark/benchmark.h>

#include "latentlm/backbone.hpp"
#include "latentlm/head.hpp"
#include "latentlm/ops.hpp"
#include "latentlm/sampler.hpp"

using namespace latentlm;
using ad::Tensor;

namespace {

Tensor randn(ad::Shape shape, Rng& rng) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return Tensor::from_data(std::move(shape), std::move(v));
}

void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    auto a = randn({n, n}, rng), b = randn({n, n}, rng);
    ad::NoGradScope no_grad;
    for (auto _ : state) benchmark::DoNotOptimize(ad::matmul(a, b));
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_CausalAttention(benchmark::State& state) {
    const auto rows = static_cast<std::size_t>(state.range(0));
    const auto kv_heads = static_cast<std::size_t>(state.range(1));
    const std::size_t heads = 8, hd = 16;
    Rng rng(2);
    auto q = randn({rows, heads * hd}, rng);
    auto k = randn({rows, kv_heads * hd}, rng), v = randn({rows, kv_heads * hd}, rng);
    ad::AttentionSpec spec{heads, kv_heads, hd, true, {{0, rows, {}}}};
    ad::NoGradScope no_grad;
    for (auto _ : state) benchmark::DoNotOptimize(ad::attention(q, k, v, spec));
}
BENCHMARK(BM_CausalAttention)->Args({64, 8})->Args({64, 1})->Args({256, 8})->Args({256, 1});

nn::BackboneConfig bench_backbone(std::size_t kv_heads) {
    nn::BackboneConfig c;
    c.d_model = 128;
    c.n_layers = 2;
    c.n_heads = 8;
    c.n_kv_heads = kv_heads;
    c.d_ffn = 256;
    c.max_seq_len = 512;
    return c;
}

// One new row against a cache already holding `prefix` positions.
void BM_CachedStep(benchmark::State& state) {
    const auto prefix = static_cast<std::size_t>(state.range(0));
    auto cfg = bench_backbone(static_cast<std::size_t>(state.range(1)));
    Rng rng(3);
    nn::Transformer model(cfg, rng);
    auto context = randn({prefix, cfg.d_model}, rng);
    auto row = randn({1, cfg.d_model}, rng);
    ad::NoGradScope no_grad;
    nn::KVCache cache(cfg);
    model.forward(context, &cache);
    for (auto _ : state) {
        benchmark::DoNotOptimize(model.forward(row, &cache));
        state.PauseTiming();
        cache.reset();
        model.forward(context, &cache);
        state.ResumeTiming();
    }
}
BENCHMARK(BM_CachedStep)->Args({16, 8})->Args({128, 8})->Args({128, 1});

void BM_FullForward(benchmark::State& state) {
    const auto rows = static_cast<std::size_t>(state.range(0));
    auto cfg = bench_backbone(8);
    Rng rng(4);
    nn::Transformer model(cfg, rng);
    auto x = randn({rows, cfg.d_model}, rng);
    ad::NoGradScope no_grad;
    for (auto _ : state) benchmark::DoNotOptimize(model.forward(x));
}
BENCHMARK(BM_FullForward)->Arg(16)->Arg(128);

diffusion::HeadConfig bench_head() { return {16, 128, 128, 3, 64, diffusion::Objective::v}; }

void BM_HeadForward(benchmark::State& state) {
    const auto rows = static_cast<std::size_t>(state.range(0));
    Rng rng(5);
    diffusion::DiffusionHead head(bench_head(), rng);
    auto x = randn({rows, 16}, rng), h = randn({rows, 128}, rng);
    std::vector<double> ts(rows, 500.0);
    ad::NoGradScope no_grad;
    for (auto _ : state) benchmark::DoNotOptimize(head.forward(x, ts, h));
}
BENCHMARK(BM_HeadForward)->Arg(1)->Arg(64);

void BM_DpmSolver(benchmark::State& state) {
    const auto steps = static_cast<std::size_t>(state.range(0));
    Rng rng(6);
    diffusion::DiffusionHead head(bench_head(), rng);
    auto sched = diffusion::NoiseSchedule::build(diffusion::ScheduleKind::cosine, 1000);
    auto h = randn({64, 128}, rng);
    diffusion::SamplerConfig sc{diffusion::SamplerMethod::dpm_solver, steps, 2, 1.0};
    for (auto _ : state) benchmark::DoNotOptimize(diffusion::sample_latents(head, sched, sc, h, Tensor{}, rng));
}
BENCHMARK(BM_DpmSolver)->Arg(20)->Arg(50);

}  // namespace

BENCHMARK_MAIN();

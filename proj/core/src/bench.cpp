#include "latentlm/bench.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <memory>

#include "latentlm/errors.hpp"
#include "latentlm/ops.hpp"

namespace latentlm::bench {

std::string to_string(Mode mode) { return mode == Mode::latentlm ? "latentlm" : "iterative_denoise"; }

namespace {

using Clock = std::chrono::steady_clock;

std::vector<MixedSequence> prompts(const LatentLM& model, std::size_t batch) {
    const MixedSequence p{Vocabulary::BOS, model.vocab().n_classes() ? model.vocab().class_token(0) : Vocabulary::BOS,
                          Vocabulary::BOD};
    return std::vector<MixedSequence>(batch, p);
}

std::vector<double> noise(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

void run_latentlm(const LatentLM& model, const ThroughputConfig& cfg, Rng& rng) {
    const auto& bb = model.backbone();
    const std::size_t B = cfg.batch, dl = model.config().d_latent();
    std::vector<std::unique_ptr<nn::KVCache>> owned;
    std::vector<nn::KVCache*> caches;
    for (std::size_t b = 0; b < B; ++b) {
        owned.push_back(std::make_unique<nn::KVCache>(bb.config()));
        caches.push_back(owned.back().get());
    }
    auto ps = prompts(model, B);
    std::vector<ad::Tensor> parts;
    for (const auto& p : ps) parts.push_back(model.embed_elements(p));
    std::vector<std::size_t> rows(B, ps.front().size());
    auto H = bb.forward(ad::concat_rows(parts), rows, caches);
    std::vector<std::size_t> last(B);
    for (std::size_t b = 0; b < B; ++b) last[b] = (b + 1) * rows[b] - 1;
    auto h = ad::gather_rows(H, last);
    std::fill(rows.begin(), rows.end(), 1);
    const auto& schedule = model.schedule();
    for (std::size_t k = 0; k < cfg.latents; ++k) {
        auto denoise = diffusion::guided_denoiser(model.head(), model.head().condition(h), ad::Tensor{}, 1.0);
        auto x_T = ad::Tensor::from_data({B, dl}, noise(B * dl, rng));
        auto z = diffusion::dpm_solver_sample(denoise, model.config().head.objective, schedule, x_T,
                                              cfg.denoise_steps, 2);
        if (k + 1 == cfg.latents) break;
        h = bb.forward(model.latent_projection()(z), rows, caches);
    }
}

void run_iterative(const LatentLM& model, const ThroughputConfig& cfg, Rng& rng) {
    const auto& bb = model.backbone();
    const std::size_t B = cfg.batch, dl = model.config().d_latent();
    auto ps = prompts(model, B);
    const std::size_t plen = ps.front().size();
    std::vector<ad::Tensor> context;  // per stream: prompt + accepted latents, embedded
    for (const auto& p : ps) context.push_back(model.embed_elements(p));
    const auto& head = model.head();
    for (std::size_t k = 0; k < cfg.latents; ++k) {
        const std::size_t len = plen + k + 1;
        std::vector<std::size_t> rows(B, len), last(B);
        for (std::size_t b = 0; b < B; ++b) last[b] = (b + 1) * len - 1;
        diffusion::Denoiser denoise = [&](const ad::Tensor& x_t, double tau) {
            auto xe = model.latent_projection()(x_t);
            std::vector<ad::Tensor> parts;
            for (std::size_t b = 0; b < B; ++b) {
                parts.push_back(context[b]);
                parts.push_back(ad::slice_rows(xe, b, b + 1));
            }
            auto H = bb.forward(ad::concat_rows(parts), rows, {}, nn::AttentionMask::bidirectional);
            std::vector<double> ts(B, tau);
            return head.forward(x_t, ts, ad::gather_rows(H, last));
        };
        auto x_T = ad::Tensor::from_data({B, dl}, noise(B * dl, rng));
        auto z = diffusion::dpm_solver_sample(denoise, model.config().head.objective, model.schedule(), x_T,
                                              cfg.denoise_steps, 2);
        auto ze = model.latent_projection()(z);
        for (std::size_t b = 0; b < B; ++b) {
            const ad::Tensor both[2] = {context[b], ad::slice_rows(ze, b, b + 1)};
            context[b] = ad::concat_rows(both);
        }
    }
}

}  // namespace

ThroughputResult bench_throughput(const LatentLM& model, Mode mode, const ThroughputConfig& cfg) {
    if (cfg.batch < 1 || cfg.latents < 1 || cfg.repeats < 1) throw ArgumentError("bench: sizes must be positive");
    if (cfg.denoise_steps < 2) throw ArgumentError("bench: denoise_steps must be at least 2");
    ad::NoGradScope no_grad;
    ThroughputResult r;
    r.mode = mode;
    r.batch = cfg.batch;
    r.n_kv_heads = model.backbone().config().n_kv_heads;
    r.tokens = cfg.batch * cfg.latents;
    r.seconds = std::numeric_limits<double>::infinity();
    Rng rng(cfg.seed);
    for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
        model.backbone().reset_counters();
        const auto t0 = Clock::now();
        if (mode == Mode::latentlm) run_latentlm(model, cfg, rng); else run_iterative(model, cfg, rng);
        r.seconds = std::min(r.seconds, std::chrono::duration<double>(Clock::now() - t0).count());
        r.backbone_calls = model.backbone().forward_calls();
    }
    r.tokens_per_sec = static_cast<double>(r.tokens) / r.seconds;
    r.backbone_calls_per_token = static_cast<double>(r.backbone_calls) / static_cast<double>(cfg.latents);
    return r;
}

}  // namespace latentlm::bench

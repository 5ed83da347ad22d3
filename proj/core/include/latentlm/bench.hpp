#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "latentlm/model.hpp"

namespace latentlm::bench {

enum class Mode { latentlm, iterative_denoise };

std::string to_string(Mode mode);

struct ThroughputResult {
    Mode mode = Mode::latentlm;
    std::size_t batch = 0;
    std::size_t n_kv_heads = 0;
    std::size_t tokens = 0;          // latents generated per repeat
    double seconds = 0.0;            // best of the repeats
    double tokens_per_sec = 0.0;
    std::size_t backbone_calls = 0;  // per repeat
    double backbone_calls_per_token = 0.0;  // per stream
};

struct ThroughputConfig {
    std::size_t batch = 1;
    std::size_t latents = 8;         // latents generated per stream
    std::size_t denoise_steps = 20;  // DPM-Solver evaluations per latent
    std::size_t repeats = 3;
    std::uint64_t seed = 0;
};

/// Streams start from [BOS, class 0, BOD] and emit `latents` latents.
/// latentlm: one KV-cached backbone call per latent, then a head-only
/// sampler. iterative_denoise: every sampler evaluation re-runs the backbone
/// bidirectionally over prompt, previous latents and the noisy latent.
ThroughputResult bench_throughput(const LatentLM& model, Mode mode, const ThroughputConfig& cfg);

}  // namespace latentlm::bench

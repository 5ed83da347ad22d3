#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "latentlm/backbone.hpp"
#include "latentlm/head.hpp"
#include "latentlm/sampler.hpp"
#include "latentlm/sequence.hpp"

namespace latentlm {

struct ModelConfig {
    nn::BackboneConfig backbone;
    diffusion::HeadConfig head;  // head.d_cond follows backbone.d_model
    std::size_t n_classes = 2;
    std::size_t n_text = 0;
    diffusion::ScheduleKind schedule = diffusion::ScheduleKind::cosine;
    std::size_t diffusion_steps = 1000;
    double alpha = 1.0;
    std::size_t n_diffusion_timesteps = 4;
    /// Latents per <BOD> block; generation closes the block with <EOD> after this many.
    std::size_t latents_per_block = 1;

    void validate() const;
    Vocabulary vocab() const { return {n_classes, n_text}; }
    std::size_t d_latent() const { return head.d_latent; }
};

enum class DiscreteMethod { greedy, top_p, temperature };

struct DiscreteSampler {
    DiscreteMethod method = DiscreteMethod::greedy;
    double top_p = 0.9;
    double temperature = 1.0;
};

std::string to_string(DiscreteMethod method);
DiscreteMethod parse_discrete_method(const std::string& text);

/// Draws from a probability vector. Greedy breaks ties toward the lowest id;
/// top_p keeps the smallest descending-probability prefix with mass >= p;
/// temperature resamples from p^(1/tau).
TokenId sample_discrete(std::span<const double> probs, const DiscreteSampler& sampler, Rng& rng);

struct LossParts {
    ad::Tensor total;
    double lm = 0.0;
    double diff = 0.0;
    std::size_t discrete_targets = 0;
    std::size_t continuous_targets = 0;
};

struct GenerateConfig {
    std::size_t max_new = 32;
    DiscreteSampler discrete;
    diffusion::SamplerConfig continuous;
    bool use_cache = true;
};

/// Backbone state that produced each generated element (first stream only).
struct GenerationTrace {
    std::vector<std::vector<double>> states;
};

class LatentLM {
public:
    LatentLM() = default;
    LatentLM(const ModelConfig& cfg, Rng& rng);

    /// Discrete rows come from the embedding table, continuous rows from a
    /// bias-free linear map of the latent.
    ad::Tensor embed_sequence(const MixedSequence& seq) const;
    ad::Tensor embed_elements(std::span<const SequenceElement> elements) const;
    /// Final-norm states, one row per element.
    ad::Tensor hidden_states(const MixedSequence& seq) const;
    ad::Tensor logits(const ad::Tensor& h) const;
    /// Next-token distribution for one state with markers that cannot follow
    /// in discrete mode masked out.
    std::vector<double> discrete_probs(std::span<const double> h_row, double temperature = 1.0) const;

    /// Teacher-forced L_LM + alpha L_Diff over a packed batch; element i+1 is
    /// the target of the state at i. PAD targets are skipped.
    LossParts compute_loss(std::span<const MixedSequence> batch, Rng& rng) const;

    /// One element from one state. `h_uncond` may be undefined.
    SequenceElement decode_step(const ad::Tensor& h, bool continuous, const GenerateConfig& cfg, Rng& rng,
                                const ad::Tensor& h_uncond = {}) const;

    /// Continuation of `prompt` (new elements only). An empty prompt starts
    /// from <BOS>; a block still open at the end is closed with <EOD>.
    MixedSequence generate(const MixedSequence& prompt, const GenerateConfig& cfg, Rng& rng,
                           GenerationTrace* trace = nullptr) const;
    /// Independent streams advanced in lockstep through one packed backbone
    /// call per step.
    std::vector<MixedSequence> generate_batch(std::span<const MixedSequence> prompts, const GenerateConfig& cfg,
                                              Rng& rng, GenerationTrace* trace = nullptr) const;

    const ModelConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }
    const nn::Transformer& backbone() const { return backbone_; }
    nn::Transformer& backbone() { return backbone_; }
    const diffusion::DiffusionHead& head() const { return head_; }
    diffusion::DiffusionHead& head() { return head_; }
    const diffusion::NoiseSchedule& schedule() const { return schedule_; }
    ad::Tensor& embedding() { return embedding_; }
    nn::Linear& latent_projection() { return latent_proj_; }
    const nn::Linear& latent_projection() const { return latent_proj_; }
    ad::Tensor& lm_head() { return lm_head_; }
    void collect(ParamList& out) const;

private:
    ModelConfig cfg_;
    Vocabulary vocab_;
    ad::Tensor embedding_;     // [|V| x d_model]
    nn::Linear latent_proj_;   // d_latent -> d_model
    nn::Transformer backbone_;
    ad::Tensor lm_head_;       // [d_model x |V|]
    diffusion::DiffusionHead head_;
    diffusion::NoiseSchedule schedule_ = diffusion::NoiseSchedule::build(diffusion::ScheduleKind::linear, 1);
};

}  // namespace latentlm

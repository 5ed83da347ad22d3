#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "latentlm/diffusion.hpp"
#include "latentlm/layers.hpp"

namespace latentlm::diffusion {

struct HeadConfig {
    std::size_t d_latent = 2;
    std::size_t d_cond = 64;  // backbone width
    std::size_t width = 64;
    std::size_t n_layers = 3;
    std::size_t time_embed_dim = 256;
    Objective objective = Objective::v;

    void validate() const;
};

/// Sinusoidal embedding [cos(t f_i), sin(t f_i)], f_i = 10000^(-i/half).
ad::Tensor timestep_embedding(std::span<const double> timesteps, std::size_t dim);

struct AdaLnBlock {
    nn::Linear modulation;  // SiLU(c) -> [shift | scale | gate], zero-initialised
    nn::Linear fc1, fc2;
};

/// Lightweight denoiser: input projection, residual feedforward blocks under
/// AdaLN-Zero modulation from c = time_mlp(t) + W_c h, then a modulated
/// output layer. Gates and the output projection start at zero, so a fresh
/// head is exactly the zero map.
class DiffusionHead {
public:
    DiffusionHead() = default;
    DiffusionHead(const HeadConfig& cfg, Rng& rng);

    ad::Tensor forward(const ad::Tensor& x_t, std::span<const double> timesteps, const ad::Tensor& h) const;

    /// W_c h: the state-dependent half of the condition. Samplers compute it
    /// once per chain and reuse it at every step.
    ad::Tensor condition(const ad::Tensor& h) const;
    ad::Tensor forward_conditioned(const ad::Tensor& x_t, std::span<const double> timesteps,
                                   const ad::Tensor& state_condition) const;

    const HeadConfig& config() const { return cfg_; }
    void collect(ParamList& out, const std::string& prefix) const;

    std::vector<AdaLnBlock>& blocks() { return blocks_; }
    nn::Linear& output_projection() { return out_proj_; }

private:
    ad::Tensor time_condition(std::span<const double> timesteps, std::size_t rows) const;

    HeadConfig cfg_;
    nn::Linear in_proj_;
    nn::Linear time_fc1_, time_fc2_;
    nn::Linear cond_proj_;
    std::vector<AdaLnBlock> blocks_;
    nn::Linear final_modulation_;  // -> [shift | scale]
    nn::Linear out_proj_;
};

/// Training loss averaged over `n_timesteps` independent (t, eps) draws per
/// row of x0: mean over draws and rows of ||target - prediction||^2.
/// x0 rows are constants; h rows carry the gradient to the backbone.
ad::Tensor diffusion_loss(const DiffusionHead& head, const NoiseSchedule& schedule, const ad::Tensor& x0,
                          const ad::Tensor& h, Rng& rng, std::size_t n_timesteps);

}  // namespace latentlm::diffusion

#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "latentlm/head.hpp"
#include "latentlm/rng.hpp"

namespace latentlm::diffusion {

enum class SamplerMethod { ancestral, dpm_solver, euler };

std::string to_string(SamplerMethod method);
SamplerMethod parse_sampler_method(const std::string& text);

struct SamplerConfig {
    SamplerMethod method = SamplerMethod::dpm_solver;
    std::size_t steps = 20;
    std::size_t order = 2;
    double cfg_scale = 1.0;

    void validate(const NoiseSchedule& schedule, Objective objective) const;
};

/// Raw prediction (in the head's objective) for rows x_t at time tau; tau is
/// the integer step for ancestral sampling and a continuous value in [1, T]
/// for the ODE solvers.
using Denoiser = std::function<ad::Tensor(const ad::Tensor& x_t, double tau)>;

/// Converts an epsilon or v prediction into an epsilon estimate.
ad::Tensor to_epsilon(const ad::Tensor& prediction, const ad::Tensor& x_t, double alpha_bar, Objective objective);

/// DDPM reverse chain from x_T: posterior mean at every step plus
/// sqrt(beta_tilde_t) noise for t > 1 (none when inject_noise is false).
/// `steps` < T respaces the chain evenly; 0 means every step.
ad::Tensor ancestral_sample(const Denoiser& denoise, Objective objective, const NoiseSchedule& schedule,
                            const ad::Tensor& x_T, Rng& rng, bool inject_noise = true, std::size_t steps = 0);

/// Deterministic probability-flow sampling, grid uniform in lambda from tau=T
/// to tau=1. `steps` is the number of model evaluations; order 2 spends two
/// per interval (midpoint, in data-prediction form), closing with a first-order
/// interval when odd.
ad::Tensor dpm_solver_sample(const Denoiser& denoise, Objective objective, const NoiseSchedule& schedule,
                             const ad::Tensor& x_T, std::size_t steps, std::size_t order);

/// Euler integration of a flow-matching velocity from t=1 to t=0.
/// The head sees tau = t * time_scale.
ad::Tensor euler_flow_sample(const Denoiser& denoise, const ad::Tensor& x_1, std::size_t steps, double time_scale);

/// Classifier-free guided denoiser. When scale == 1 or no unconditional state
/// is given the unconditional branch is never evaluated.
Denoiser guided_denoiser(const DiffusionHead& head, const ad::Tensor& cond_state,
                         const ad::Tensor& uncond_state, double scale);

/// Draws one latent per row of h_cond. h_uncond may be undefined.
ad::Tensor sample_latents(const DiffusionHead& head, const NoiseSchedule& schedule, const SamplerConfig& cfg,
                          const ad::Tensor& h_cond, const ad::Tensor& h_uncond, Rng& rng);

}  // namespace latentlm::diffusion

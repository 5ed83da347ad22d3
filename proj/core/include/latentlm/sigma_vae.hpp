#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "latentlm/layers.hpp"
#include "latentlm/rng.hpp"

namespace latentlm::vae {

enum class VarianceKind { sampled, fixed, learned };

/// sampled: sigma ~ N(0, value) per example (value is the variance C_sigma).
/// fixed:   sigma = value.
/// learned: per-channel log-variance from the encoder (vanilla VAE).
struct VariancePolicy {
    VarianceKind kind = VarianceKind::sampled;
    double value = 0.25;

    static VariancePolicy sampled(double c_sigma) { return {VarianceKind::sampled, c_sigma}; }
    static VariancePolicy fixed(double sigma) { return {VarianceKind::fixed, sigma}; }
    static VariancePolicy learned() { return {VarianceKind::learned, 0.0}; }
};

std::string to_string(VarianceKind kind);
VarianceKind parse_variance_kind(const std::string& text);

struct VaeConfig {
    std::size_t d_input = 8;
    std::size_t d_latent = 2;
    VariancePolicy policy;
    double beta_vae = 1e-4;
    std::size_t hidden = 64;
    std::size_t hidden_layers = 1;  // 0 makes encoder and decoder linear

    void validate() const;
};

double sample_sigma(Rng& rng, const VariancePolicy& policy);

/// z = mu + sigma_r * eps, sigma_r broadcast over the channels of row r.
ad::Tensor reparameterize(const ad::Tensor& mu, std::span<const double> sigmas, const ad::Tensor& eps);
ad::Tensor reparameterize(const ad::Tensor& mu, double sigma, const ad::Tensor& eps);
/// Vanilla form: z = mu + exp(logvar / 2) * eps.
ad::Tensor reparameterize_learned(const ad::Tensor& mu, const ad::Tensor& logvar, const ad::Tensor& eps);

/// Batch mean of ||x_hat - x||^2 + beta ||mu||^2.
ad::Tensor vae_loss(const ad::Tensor& x, const ad::Tensor& x_hat, const ad::Tensor& mu, double beta);
/// Batch mean of ||x_hat - x||^2 + beta KL(N(mu, exp(logvar)) || N(0, I)).
ad::Tensor vanilla_vae_loss(const ad::Tensor& x, const ad::Tensor& x_hat, const ad::Tensor& mu,
                            const ad::Tensor& logvar, double beta);

struct Encoded {
    ad::Tensor mu;
    ad::Tensor logvar;  // only for the learned policy
};

class SigmaVae {
public:
    SigmaVae() = default;
    SigmaVae(const VaeConfig& cfg, Rng& rng);

    Encoded encode_full(const ad::Tensor& x) const;
    ad::Tensor encode(const ad::Tensor& x) const { return encode_full(x).mu; }
    ad::Tensor decode(const ad::Tensor& z) const;

    /// Draws z for every row with the configured policy.
    ad::Tensor sample_latent(const Encoded& enc, Rng& rng) const;
    /// One stochastic training loss on a batch.
    ad::Tensor loss(const ad::Tensor& x, Rng& rng) const;
    /// Deterministic reconstruction error decode(encode(x)), mean over rows of
    /// the squared error sum.
    double reconstruction_mse(const ad::Tensor& x) const;

    const VaeConfig& config() const { return cfg_; }
    void collect(ParamList& out, const std::string& prefix) const;

    std::vector<nn::Linear>& encoder() { return encoder_; }
    std::vector<nn::Linear>& decoder() { return decoder_; }

private:
    VaeConfig cfg_;
    std::vector<nn::Linear> encoder_;  // last layer emits mu (and logvar)
    std::vector<nn::Linear> decoder_;
};

struct VarianceReport {
    std::vector<double> var_mu;
    std::vector<double> var_z;
    std::vector<double> var_noise;  // var(z - mu)
    std::vector<bool> collapsed;    // var_noise below threshold
    std::size_t collapsed_count() const;
};

/// Per-channel sample variances over the rows of `data`.
VarianceReport latent_variance_report(const SigmaVae& model, const ad::Tensor& data, Rng& rng,
                                      double threshold = 1e-3);

struct VaeTrainConfig {
    std::size_t steps = 2000;
    std::size_t batch_size = 64;
    double lr = 3e-3;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
};

/// Minibatch AdamW on rows of `data`; returns the loss at every step.
std::vector<double> train_vae(SigmaVae& model, const ad::Tensor& data, const VaeTrainConfig& cfg);

}  // namespace latentlm::vae

#include "latentlm/sigma_vae.hpp"

#include <cmath>
#include <numbers>

#include "latentlm/errors.hpp"
#include "latentlm/ops.hpp"

namespace latentlm::vae {

std::string to_string(VarianceKind kind) {
    switch (kind) {
        case VarianceKind::sampled: return "sampled";
        case VarianceKind::fixed: return "fixed";
        case VarianceKind::learned: return "learned";
    }
    return "?";
}

VarianceKind parse_variance_kind(const std::string& text) {
    if (text == "sampled") return VarianceKind::sampled;
    if (text == "fixed") return VarianceKind::fixed;
    if (text == "learned") return VarianceKind::learned;
    throw ConfigError("unknown variance policy '" + text + "' (expected sampled|fixed|learned)");
}

void VaeConfig::validate() const {
    if (d_input == 0) throw ConfigError("vae: d_input must be positive");
    if (d_latent == 0) throw ConfigError("vae: d_latent must be at least 1");
    if (beta_vae < 0.0) throw ConfigError("vae: beta_vae must be non-negative");
    if (policy.kind == VarianceKind::sampled && policy.value < 0.0) {
        throw ConfigError("vae: C_sigma must be non-negative");
    }
    if (hidden_layers > 0 && hidden == 0) throw ConfigError("vae: hidden width must be positive");
}

double sample_sigma(Rng& rng, const VariancePolicy& policy) {
    switch (policy.kind) {
        case VarianceKind::sampled: return policy.value == 0.0 ? 0.0 : std::sqrt(policy.value) * rng.normal();
        case VarianceKind::fixed: return policy.value;
        case VarianceKind::learned: break;
    }
    throw ArgumentError("sample_sigma: the learned policy has no scalar sigma");
}

ad::Tensor reparameterize(const ad::Tensor& mu, std::span<const double> sigmas, const ad::Tensor& eps) {
    if (mu.shape() != eps.shape()) throw DimensionError("reparameterize: mu and eps shapes differ");
    if (sigmas.size() != mu.rows()) throw DimensionError("reparameterize: one sigma per row required");
    const std::size_t d = mu.cols();
    std::vector<double> noise(eps.numel());
    auto ev = eps.data();
    for (std::size_t r = 0; r < mu.rows(); ++r) {
        for (std::size_t j = 0; j < d; ++j) noise[r * d + j] = sigmas[r] * ev[r * d + j];
    }
    return ad::add(mu, ad::Tensor::from_data(mu.shape(), std::move(noise)));
}

ad::Tensor reparameterize(const ad::Tensor& mu, double sigma, const ad::Tensor& eps) {
    std::vector<double> sigmas(mu.rows(), sigma);
    return reparameterize(mu, sigmas, eps);
}

ad::Tensor reparameterize_learned(const ad::Tensor& mu, const ad::Tensor& logvar, const ad::Tensor& eps) {
    if (mu.shape() != eps.shape() || mu.shape() != logvar.shape()) {
        throw DimensionError("reparameterize: mu, logvar and eps shapes differ");
    }
    return ad::add(mu, ad::mul(ad::exp(ad::scale(logvar, 0.5)), eps));
}

namespace {

ad::Tensor batch_sq_error(const ad::Tensor& x, const ad::Tensor& x_hat) {
    if (x.shape() != x_hat.shape()) {
        throw DimensionError("vae_loss: x " + ad::shape_string(x.shape()) + " vs x_hat " +
                             ad::shape_string(x_hat.shape()));
    }
    return ad::sum(ad::square(ad::sub(x_hat, x)));
}

ad::Tensor eps_like(const ad::Tensor& t, Rng& rng) {
    std::vector<double> e(t.numel());
    for (auto& v : e) v = rng.normal();
    return ad::Tensor::from_data(t.shape(), std::move(e));
}

}  // namespace

ad::Tensor vae_loss(const ad::Tensor& x, const ad::Tensor& x_hat, const ad::Tensor& mu, double beta) {
    if (mu.rows() != x.rows()) throw DimensionError("vae_loss: mu and x batch sizes differ");
    auto total = batch_sq_error(x, x_hat);
    if (beta != 0.0) total = ad::add(total, ad::scale(ad::sum(ad::square(mu)), beta));
    return ad::scale(total, 1.0 / static_cast<double>(x.rows()));
}

ad::Tensor vanilla_vae_loss(const ad::Tensor& x, const ad::Tensor& x_hat, const ad::Tensor& mu,
                            const ad::Tensor& logvar, double beta) {
    if (mu.shape() != logvar.shape() || mu.rows() != x.rows()) {
        throw DimensionError("vanilla_vae_loss: mu/logvar/x shapes disagree");
    }
    // KL = 1/2 sum(mu^2 + e^logvar - 1 - logvar)
    auto kl = ad::sum(ad::sub(ad::add(ad::square(mu), ad::exp(logvar)), ad::add_scalar(logvar, 1.0)));
    auto total = ad::add(batch_sq_error(x, x_hat), ad::scale(kl, 0.5 * beta));
    return ad::scale(total, 1.0 / static_cast<double>(x.rows()));
}

namespace {
double fan_in_std(std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); }

std::vector<nn::Linear> make_mlp(std::size_t in, std::size_t hidden, std::size_t layers, std::size_t out,
                                 Rng& rng) {
    std::vector<nn::Linear> mlp;
    std::size_t width = in;
    for (std::size_t l = 0; l < layers; ++l) {
        mlp.emplace_back(width, hidden, true, rng, fan_in_std(width));
        width = hidden;
    }
    mlp.emplace_back(width, out, true, rng, fan_in_std(width));
    return mlp;
}

ad::Tensor run_mlp(const std::vector<nn::Linear>& mlp, ad::Tensor x) {
    for (std::size_t l = 0; l + 1 < mlp.size(); ++l) x = ad::silu(mlp[l](x));
    return mlp.back()(x);
}
}  // namespace

SigmaVae::SigmaVae(const VaeConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t enc_out = cfg.policy.kind == VarianceKind::learned ? 2 * cfg.d_latent : cfg.d_latent;
    encoder_ = make_mlp(cfg.d_input, cfg.hidden, cfg.hidden_layers, enc_out, rng);
    decoder_ = make_mlp(cfg.d_latent, cfg.hidden, cfg.hidden_layers, cfg.d_input, rng);
}

Encoded SigmaVae::encode_full(const ad::Tensor& x) const {
    if (x.cols() != cfg_.d_input) {
        throw DimensionError("vae encode: input " + ad::shape_string(x.shape()) + " is not [B x " +
                             std::to_string(cfg_.d_input) + "]");
    }
    auto out = run_mlp(encoder_, x);
    if (cfg_.policy.kind != VarianceKind::learned) return {out, ad::Tensor{}};
    return {ad::slice_cols(out, 0, cfg_.d_latent), ad::slice_cols(out, cfg_.d_latent, 2 * cfg_.d_latent)};
}

ad::Tensor SigmaVae::decode(const ad::Tensor& z) const {
    if (z.cols() != cfg_.d_latent) {
        throw DimensionError("vae decode: latent " + ad::shape_string(z.shape()) + " is not [B x " +
                             std::to_string(cfg_.d_latent) + "]");
    }
    return run_mlp(decoder_, z);
}

ad::Tensor SigmaVae::sample_latent(const Encoded& enc, Rng& rng) const {
    if (cfg_.policy.kind == VarianceKind::learned) {
        return reparameterize_learned(enc.mu, enc.logvar, eps_like(enc.mu, rng));
    }
    const std::size_t b = enc.mu.rows(), d = cfg_.d_latent;
    std::vector<double> sigmas(b), eps(b * d);
    for (std::size_t r = 0; r < b; ++r) {
        sigmas[r] = sample_sigma(rng, cfg_.policy);
        for (std::size_t j = 0; j < d; ++j) eps[r * d + j] = rng.normal();
    }
    return reparameterize(enc.mu, sigmas, ad::Tensor::from_data(enc.mu.shape(), std::move(eps)));
}

ad::Tensor SigmaVae::loss(const ad::Tensor& x, Rng& rng) const {
    auto enc = encode_full(x);
    auto x_hat = decode(sample_latent(enc, rng));
    if (cfg_.policy.kind == VarianceKind::learned) {
        return vanilla_vae_loss(x, x_hat, enc.mu, enc.logvar, cfg_.beta_vae);
    }
    return vae_loss(x, x_hat, enc.mu, cfg_.beta_vae);
}

double SigmaVae::reconstruction_mse(const ad::Tensor& x) const {
    ad::NoGradScope no_grad;
    auto x_hat = decode(encode(x));
    double total = 0.0;
    auto a = x.data(), b = x_hat.data();
    for (std::size_t i = 0; i < a.size(); ++i) total += (a[i] - b[i]) * (a[i] - b[i]);
    return total / static_cast<double>(x.rows());
}

void SigmaVae::collect(ParamList& out, const std::string& prefix) const {
    for (std::size_t l = 0; l < encoder_.size(); ++l) encoder_[l].collect(out, prefix + ".encoder." + std::to_string(l));
    for (std::size_t l = 0; l < decoder_.size(); ++l) decoder_[l].collect(out, prefix + ".decoder." + std::to_string(l));
}

std::size_t VarianceReport::collapsed_count() const {
    std::size_t n = 0;
    for (bool c : collapsed) n += c ? 1 : 0;
    return n;
}

namespace {
std::vector<double> column_variance(std::span<const double> v, std::size_t rows, std::size_t cols) {
    std::vector<double> mean(cols, 0.0), var(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cols; ++j) mean[j] += v[r * cols + j];
    }
    for (auto& m : mean) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cols; ++j) {
            const double d = v[r * cols + j] - mean[j];
            var[j] += d * d;
        }
    }
    const double denom = rows > 1 ? static_cast<double>(rows - 1) : 1.0;
    for (auto& x : var) x /= denom;
    return var;
}
}  // namespace

VarianceReport latent_variance_report(const SigmaVae& model, const ad::Tensor& data, Rng& rng, double threshold) {
    if (data.rows() == 0 || data.numel() == 0) throw ArgumentError("latent_variance_report: empty dataset");
    ad::NoGradScope no_grad;
    auto enc = model.encode_full(data);
    auto z = model.sample_latent(enc, rng);
    const std::size_t n = data.rows(), d = model.config().d_latent;
    std::vector<double> noise(n * d);
    auto zv = z.data(), mv = enc.mu.data();
    for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = zv[i] - mv[i];

    VarianceReport rep;
    rep.var_mu = column_variance(mv, n, d);
    rep.var_z = column_variance(zv, n, d);
    rep.var_noise = column_variance(noise, n, d);
    rep.collapsed.resize(d);
    for (std::size_t j = 0; j < d; ++j) rep.collapsed[j] = rep.var_noise[j] < threshold;
    return rep;
}

std::vector<double> train_vae(SigmaVae& model, const ad::Tensor& data, const VaeTrainConfig& cfg) {
    if (data.rows() == 0) throw ArgumentError("train_vae: empty dataset");
    if (cfg.batch_size == 0) throw ArgumentError("train_vae: batch_size must be positive");
    ParamList params;
    model.collect(params, "vae");
    AdamW opt(params, AdamWConfig{cfg.lr, 0.9, 0.98, 1e-8, cfg.weight_decay});
    Rng rng(cfg.seed);
    const std::size_t d = data.cols();
    auto dv = data.data();
    std::vector<double> history;
    history.reserve(cfg.steps);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::vector<double> batch(cfg.batch_size * d);
        for (std::size_t r = 0; r < cfg.batch_size; ++r) {
            const std::size_t i = rng.uniform_index(data.rows());
            std::copy(dv.begin() + static_cast<std::ptrdiff_t>(i * d),
                      dv.begin() + static_cast<std::ptrdiff_t>((i + 1) * d),
                      batch.begin() + static_cast<std::ptrdiff_t>(r * d));
        }
        opt.zero_grad();
        auto loss = model.loss(ad::Tensor::from_data({cfg.batch_size, d}, std::move(batch)), rng);
        history.push_back(loss.item());
        ad::backward(loss);
        const double progress = static_cast<double>(step) / static_cast<double>(cfg.steps);
        opt.step(cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
    }
    return history;
}

}  // namespace latentlm::vae

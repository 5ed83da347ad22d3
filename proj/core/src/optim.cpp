#include "latentlm/optim.hpp"

#include <cmath>

#include "latentlm/errors.hpp"

namespace latentlm {

std::size_t count_parameters(const ParamList& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
}

void zero_grads(ParamList& params) {
    for (auto& p : params) p.tensor.zero_grad();
}

void adamw_update(std::span<double> param, std::span<const double> grad, Moments& moments,
                  const AdamWConfig& cfg, double lr, std::uint64_t step, bool decay) {
    if (moments.m.size() != param.size() || moments.v.size() != param.size()) {
        throw DimensionError("adamw_update: moment buffers do not match parameter size");
    }
    if (!grad.empty() && grad.size() != param.size()) {
        throw DimensionError("adamw_update: gradient size does not match parameter size");
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    const double wd = decay ? cfg.weight_decay : 0.0;
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad.empty() ? 0.0 : grad[i];
        moments.m[i] = cfg.beta1 * moments.m[i] + (1.0 - cfg.beta1) * g;
        moments.v[i] = cfg.beta2 * moments.v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = moments.m[i] / bc1;
        const double v_hat = moments.v[i] / bc2;
        const double p = param[i] * (1.0 - lr * wd) - lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        param[i] = ad::round_to_precision(p);
    }
}

AdamW::AdamW(ParamList params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    moments_.reserve(params_.size());
    for (const auto& p : params_) {
        moments_.push_back({std::vector<double>(p.tensor.numel(), 0.0), std::vector<double>(p.tensor.numel(), 0.0)});
    }
}

void AdamW::step(double lr) {
    for (const auto& p : params_) {
        for (double g : p.tensor.grad()) {
            if (!std::isfinite(g)) {
                throw NumericError("adamw: non-finite gradient in parameter '" + p.name + "' at step " +
                                   std::to_string(step_ + 1) + "; update skipped");
            }
        }
    }
    ++step_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        adamw_update(p.tensor.mutable_data(), p.tensor.grad(), moments_[i], cfg_, lr, step_, p.decay);
    }
}

void AdamW::zero_grad() { zero_grads(params_); }

void AdamW::restore(std::vector<Moments> moments, std::uint64_t step) {
    if (moments.size() != params_.size()) throw FormatError("optimizer state: parameter count mismatch");
    for (std::size_t i = 0; i < moments.size(); ++i) {
        if (moments[i].m.size() != params_[i].tensor.numel() || moments[i].v.size() != params_[i].tensor.numel()) {
            throw FormatError("optimizer state: moment size mismatch for '" + params_[i].name + "'");
        }
    }
    moments_ = std::move(moments);
    step_ = step;
}

double clip_grad_norm(ParamList& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params)
        for (double g : p.tensor.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double f = max_norm / norm;
        for (auto& p : params) {
            auto& grad = p.tensor.node()->grad;
            for (auto& g : grad) g *= f;
        }
    }
    return norm;
}

}  // namespace latentlm

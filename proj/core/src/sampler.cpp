#include "latentlm/sampler.hpp"

#include <cmath>
#include <vector>

#include "latentlm/errors.hpp"
#include "latentlm/ops.hpp"

namespace latentlm::diffusion {

std::string to_string(SamplerMethod method) {
    switch (method) {
        case SamplerMethod::ancestral: return "ancestral";
        case SamplerMethod::dpm_solver: return "dpm_solver";
        case SamplerMethod::euler: return "euler";
    }
    return "?";
}

SamplerMethod parse_sampler_method(const std::string& text) {
    if (text == "ancestral") return SamplerMethod::ancestral;
    if (text == "dpm_solver" || text == "dpm") return SamplerMethod::dpm_solver;
    if (text == "euler") return SamplerMethod::euler;
    throw ConfigError("unknown sampler '" + text + "' (expected ancestral|dpm_solver|euler)");
}

void SamplerConfig::validate(const NoiseSchedule& schedule, Objective objective) const {
    if (steps < 1) throw ArgumentError("sampler: steps must be at least 1");
    if (cfg_scale < 0.0) throw ArgumentError("sampler: cfg_scale must be non-negative");
    switch (method) {
        case SamplerMethod::ancestral:
            if (steps > schedule.steps()) throw ArgumentError("sampler: ancestral steps exceed T");
            if (objective == Objective::flow) throw ArgumentError("sampler: ancestral needs an epsilon or v head");
            break;
        case SamplerMethod::dpm_solver:
            if (order != 1 && order != 2) throw ArgumentError("sampler: solver order must be 1 or 2");
            if (steps < order) throw ArgumentError("sampler: steps must be at least the solver order");
            if (objective == Objective::flow) throw ArgumentError("sampler: dpm_solver needs an epsilon or v head");
            break;
        case SamplerMethod::euler:
            if (objective != Objective::flow) throw ArgumentError("sampler: euler integrates a flow head");
            break;
    }
}

ad::Tensor to_epsilon(const ad::Tensor& prediction, const ad::Tensor& x_t, double alpha_bar, Objective objective) {
    switch (objective) {
        case Objective::epsilon: return prediction;
        case Objective::v: {
            auto e = eps_from_v(x_t.data(), prediction.data(), alpha_bar);
            return ad::Tensor::from_data(x_t.shape(), std::move(e));
        }
        case Objective::flow: break;
    }
    throw ArgumentError("to_epsilon: flow predictions have no epsilon form on the DDPM schedule");
}

ad::Tensor ancestral_sample(const Denoiser& denoise, Objective objective, const NoiseSchedule& schedule,
                            const ad::Tensor& x_T, Rng& rng, bool inject_noise, std::size_t steps) {
    const std::size_t T = schedule.steps();
    if (steps == 0) steps = T;
    if (steps > T) throw ArgumentError("ancestral: steps exceed T");
    ad::NoGradScope no_grad;
    // Respaced chain t_k = round(k T / steps); steps == T walks every step.
    std::vector<std::size_t> ts(steps + 1, 0);
    for (std::size_t k = 1; k <= steps; ++k) {
        ts[k] = static_cast<std::size_t>(std::llround(static_cast<double>(k) * static_cast<double>(T) /
                                                      static_cast<double>(steps)));
    }
    std::vector<double> x(x_T.data().begin(), x_T.data().end());
    const auto shape = x_T.shape();
    for (std::size_t k = steps; k >= 1; --k) {
        const std::size_t t = ts[k], t_prev = ts[k - 1];
        auto xt = ad::Tensor::from_data(shape, x);
        const double ab = schedule.alpha_bar(t), ab_prev = schedule.alpha_bar(t_prev);
        const double beta = t_prev + 1 == t ? schedule.beta(t) : 1.0 - ab / ab_prev;
        auto eps = to_epsilon(denoise(xt, static_cast<double>(t)), xt, ab, objective);
        auto ev = eps.data();
        auto xv = xt.data();
        const double c = beta / std::sqrt(1.0 - ab), inv = 1.0 / std::sqrt(1.0 - beta);
        const double sigma = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = (xv[i] - c * ev[i]) * inv;
            if (k > 1 && inject_noise) x[i] += sigma * rng.normal();
        }
    }
    return ad::Tensor::from_data(shape, std::move(x));
}

ad::Tensor dpm_solver_sample(const Denoiser& denoise, Objective objective, const NoiseSchedule& schedule,
                             const ad::Tensor& x_T, std::size_t steps, std::size_t order) {
    if (order != 1 && order != 2) throw ArgumentError("dpm_solver: order must be 1 or 2");
    if (steps < order) throw ArgumentError("dpm_solver: steps (" + std::to_string(steps) + ") < order");
    ad::NoGradScope no_grad;

    std::vector<std::size_t> orders;
    if (order == 1) {
        orders.assign(steps, 1);
    } else {
        orders.assign(steps / 2, 2);
        if (steps % 2) orders.push_back(1);
    }
    const double T = static_cast<double>(schedule.steps());
    const double lam_start = schedule.lambda(T), lam_end = schedule.lambda(1.0);
    const double K = static_cast<double>(orders.size());

    auto predict = [&](const std::vector<double>& x, double lam) {
        const double tau = schedule.tau_of_lambda(lam);
        auto xt = ad::Tensor::from_data(x_T.shape(), x);
        return denoise(xt, tau);
    };
    // Data prediction x0 = (x - sigma eps) / alpha, taken straight from v
    // when the head predicts v.
    auto x0_at = [&](const std::vector<double>& x, double lam) {
        const double a = NoiseSchedule::alpha_of_lambda(lam), s = NoiseSchedule::sigma_of_lambda(lam);
        auto pred = predict(x, lam);
        auto pv = pred.data();
        std::vector<double> out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            out[i] = objective == Objective::v ? a * x[i] - s * pv[i] : (x[i] - s * pv[i]) / a;
        }
        return out;
    };

    std::vector<double> x(x_T.data().begin(), x_T.data().end());
    for (std::size_t k = 0; k < orders.size(); ++k) {
        const double lam_s = lam_start + (lam_end - lam_start) * static_cast<double>(k) / K;
        const double lam_t = lam_start + (lam_end - lam_start) * static_cast<double>(k + 1) / K;
        const double h = lam_t - lam_s;
        const double a_s = NoiseSchedule::alpha_of_lambda(lam_s), s_s = NoiseSchedule::sigma_of_lambda(lam_s);
        const double a_t = NoiseSchedule::alpha_of_lambda(lam_t), s_t = NoiseSchedule::sigma_of_lambda(lam_t);
        if (orders[k] == 1) {
            auto e_s = to_epsilon(predict(x, lam_s), ad::Tensor::from_data(x_T.shape(), x), a_s * a_s, objective);
            auto ev = e_s.data();
            for (std::size_t i = 0; i < x.size(); ++i) x[i] = a_t / a_s * x[i] - s_t * std::expm1(h) * ev[i];
        } else {
            // Midpoint step in data-prediction form.
            const double lam_m = lam_s + 0.5 * h;
            const double a_m = NoiseSchedule::alpha_of_lambda(lam_m), s_m = NoiseSchedule::sigma_of_lambda(lam_m);
            auto d_s = x0_at(x, lam_s);
            std::vector<double> u(x.size());
            for (std::size_t i = 0; i < x.size(); ++i) u[i] = s_m / s_s * x[i] - a_m * std::expm1(-0.5 * h) * d_s[i];
            auto d_m = x0_at(u, lam_m);
            for (std::size_t i = 0; i < x.size(); ++i) x[i] = s_t / s_s * x[i] - a_t * std::expm1(-h) * d_m[i];
        }
    }
    return ad::Tensor::from_data(x_T.shape(), std::move(x));
}

ad::Tensor euler_flow_sample(const Denoiser& denoise, const ad::Tensor& x_1, std::size_t steps, double time_scale) {
    if (steps < 1) throw ArgumentError("euler: steps must be at least 1");
    ad::NoGradScope no_grad;
    std::vector<double> x(x_1.data().begin(), x_1.data().end());
    const double dt = 1.0 / static_cast<double>(steps);
    for (std::size_t k = 0; k < steps; ++k) {
        const double t = 1.0 - static_cast<double>(k) * dt;
        auto u = denoise(ad::Tensor::from_data(x_1.shape(), x), t * time_scale);
        auto uv = u.data();
        for (std::size_t i = 0; i < x.size(); ++i) x[i] -= dt * uv[i];
    }
    return ad::Tensor::from_data(x_1.shape(), std::move(x));
}

Denoiser guided_denoiser(const DiffusionHead& head, const ad::Tensor& cond_state, const ad::Tensor& uncond_state,
                         double scale) {
    const bool guided = uncond_state.defined() && scale != 1.0;
    return [&head, cond_state, uncond_state, scale, guided](const ad::Tensor& x_t, double tau) {
        std::vector<double> ts(x_t.rows(), tau);
        auto cond = head.forward_conditioned(x_t, ts, cond_state);
        if (!guided) return cond;
        auto uncond = head.forward_conditioned(x_t, ts, uncond_state);
        return cfg_combine(cond, uncond, scale);
    };
}

ad::Tensor sample_latents(const DiffusionHead& head, const NoiseSchedule& schedule, const SamplerConfig& cfg,
                          const ad::Tensor& h_cond, const ad::Tensor& h_uncond, Rng& rng) {
    const auto objective = head.config().objective;
    cfg.validate(schedule, objective);
    ad::NoGradScope no_grad;
    const std::size_t m = h_cond.rows(), d = head.config().d_latent;
    std::vector<double> noise(m * d);
    for (auto& v : noise) v = rng.normal();
    auto x_T = ad::Tensor::from_data({m, d}, std::move(noise));

    const bool guided = h_uncond.defined() && cfg.cfg_scale != 1.0;
    auto denoise = guided_denoiser(head, head.condition(h_cond),
                                   guided ? head.condition(h_uncond) : ad::Tensor{}, cfg.cfg_scale);
    switch (cfg.method) {
        case SamplerMethod::ancestral:
            return ancestral_sample(denoise, objective, schedule, x_T, rng, true, cfg.steps);
        case SamplerMethod::dpm_solver:
            return dpm_solver_sample(denoise, objective, schedule, x_T, cfg.steps, cfg.order);
        case SamplerMethod::euler:
            return euler_flow_sample(denoise, x_T, cfg.steps, static_cast<double>(schedule.steps()));
    }
    throw ArgumentError("sampler: unknown method");
}

}  // namespace latentlm::diffusion

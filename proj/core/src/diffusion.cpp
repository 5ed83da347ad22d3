#include "latentlm/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "latentlm/errors.hpp"
#include "latentlm/ops.hpp"

namespace latentlm::diffusion {

std::string to_string(ScheduleKind kind) { return kind == ScheduleKind::linear ? "linear" : "cosine"; }

std::string to_string(Objective objective) {
    switch (objective) {
        case Objective::epsilon: return "epsilon";
        case Objective::v: return "v";
        case Objective::flow: return "flow";
    }
    return "?";
}

ScheduleKind parse_schedule_kind(const std::string& text) {
    if (text == "linear") return ScheduleKind::linear;
    if (text == "cosine") return ScheduleKind::cosine;
    throw ConfigError("unknown schedule kind '" + text + "' (expected linear|cosine)");
}

Objective parse_objective(const std::string& text) {
    if (text == "epsilon" || text == "eps") return Objective::epsilon;
    if (text == "v") return Objective::v;
    if (text == "flow") return Objective::flow;
    throw ConfigError("unknown objective '" + text + "' (expected epsilon|v|flow)");
}

NoiseSchedule::NoiseSchedule(ScheduleKind kind, std::vector<double> betas) : kind_(kind), beta_(std::move(betas)) {
    if (beta_.empty()) throw ArgumentError("noise schedule: T must be at least 1");
    alpha_bar_.resize(beta_.size());
    lambda_.resize(beta_.size());
    double prod = 1.0;
    for (std::size_t i = 0; i < beta_.size(); ++i) {
        if (!(beta_[i] > 0.0 && beta_[i] < 1.0)) {
            throw ArgumentError("noise schedule: beta_" + std::to_string(i + 1) + " outside (0, 1)");
        }
        prod *= 1.0 - beta_[i];
        alpha_bar_[i] = prod;
        lambda_[i] = 0.5 * (std::log(prod) - std::log1p(-prod));
    }
}

NoiseSchedule NoiseSchedule::build(ScheduleKind kind, std::size_t T) {
    if (T < 1) throw ArgumentError("noise schedule: T must be at least 1");
    std::vector<double> betas(T);
    if (kind == ScheduleKind::linear) {
        constexpr double lo = 1e-4, hi = 0.02;
        for (std::size_t i = 0; i < T; ++i) {
            betas[i] = T == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(T - 1);
        }
    } else {
        constexpr double s = 0.008;
        auto f = [&](double t) {
            const double c = std::cos((t / static_cast<double>(T) + s) / (1.0 + s) * std::numbers::pi / 2.0);
            return c * c;
        };
        const double f0 = f(0.0);
        for (std::size_t i = 0; i < T; ++i) {
            const double ab_prev = f(static_cast<double>(i)) / f0;
            const double ab = f(static_cast<double>(i + 1)) / f0;
            betas[i] = std::min(1.0 - ab / ab_prev, 0.999);
        }
    }
    return NoiseSchedule(kind, std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
    return NoiseSchedule(ScheduleKind::linear, std::move(betas));
}

double NoiseSchedule::beta(std::size_t t) const {
    if (t < 1 || t > steps()) throw IndexError("noise schedule: t=" + std::to_string(t) + " outside [1, T]");
    return beta_[t - 1];
}

double NoiseSchedule::alpha_bar(std::size_t t) const {
    if (t == 0) return 1.0;
    if (t > steps()) throw IndexError("noise schedule: t=" + std::to_string(t) + " outside [0, T]");
    return alpha_bar_[t - 1];
}

double NoiseSchedule::lambda(double tau) const {
    const double T = static_cast<double>(steps());
    tau = std::clamp(tau, 1.0, T);
    const auto lo = static_cast<std::size_t>(std::floor(tau));
    if (lo >= steps()) return lambda_.back();
    const double w = tau - static_cast<double>(lo);
    return (1.0 - w) * lambda_[lo - 1] + w * lambda_[lo];
}

double NoiseSchedule::tau_of_lambda(double lam) const {
    // lambda_ is strictly decreasing in t.
    if (lam >= lambda_.front()) return 1.0;
    if (lam <= lambda_.back()) return static_cast<double>(steps());
    std::size_t lo = 0, hi = lambda_.size() - 1;
    while (hi - lo > 1) {
        const std::size_t mid = (lo + hi) / 2;
        if (lambda_[mid] >= lam) lo = mid; else hi = mid;
    }
    const double w = (lambda_[lo] - lam) / (lambda_[lo] - lambda_[hi]);
    return static_cast<double>(lo + 1) + w;
}

double NoiseSchedule::alpha_bar_at(double tau) const {
    const double a = alpha_of_lambda(lambda(tau));
    return a * a;
}

double NoiseSchedule::alpha_of_lambda(double lam) { return 1.0 / std::sqrt(1.0 + std::exp(-2.0 * lam)); }
double NoiseSchedule::sigma_of_lambda(double lam) { return 1.0 / std::sqrt(1.0 + std::exp(2.0 * lam)); }

namespace {
void require_same_size(std::span<const double> a, std::span<const double> b, const char* op) {
    if (a.size() != b.size()) throw DimensionError(std::string(op) + ": vector lengths differ");
}
}  // namespace

std::vector<double> forward_diffuse(std::span<const double> x0, double alpha_bar, std::span<const double> eps) {
    require_same_size(x0, eps, "forward_diffuse");
    const double a = std::sqrt(alpha_bar), s = std::sqrt(1.0 - alpha_bar);
    std::vector<double> out(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + s * eps[i];
    return out;
}

std::vector<double> forward_diffuse(std::span<const double> x0, std::size_t t, std::span<const double> eps,
                                    const NoiseSchedule& schedule) {
    if (t < 1 || t > schedule.steps()) {
        throw IndexError("forward_diffuse: t=" + std::to_string(t) + " outside [1, " +
                         std::to_string(schedule.steps()) + "]");
    }
    return forward_diffuse(x0, schedule.alpha_bar(t), eps);
}

std::vector<double> v_target(std::span<const double> x0, std::span<const double> eps, double alpha_bar) {
    require_same_size(x0, eps, "v_target");
    const double a = std::sqrt(alpha_bar), s = std::sqrt(1.0 - alpha_bar);
    std::vector<double> out(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * eps[i] - s * x0[i];
    return out;
}

std::vector<double> x0_from_v(std::span<const double> x_t, std::span<const double> v, double alpha_bar) {
    require_same_size(x_t, v, "x0_from_v");
    const double a = std::sqrt(alpha_bar), s = std::sqrt(1.0 - alpha_bar);
    std::vector<double> out(x_t.size());
    for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = a * x_t[i] - s * v[i];
    return out;
}

std::vector<double> eps_from_v(std::span<const double> x_t, std::span<const double> v, double alpha_bar) {
    require_same_size(x_t, v, "eps_from_v");
    const double a = std::sqrt(alpha_bar), s = std::sqrt(1.0 - alpha_bar);
    std::vector<double> out(x_t.size());
    for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = s * x_t[i] + a * v[i];
    return out;
}

FlowPoint flow_target(std::span<const double> x0, std::span<const double> eps, double t_cont) {
    require_same_size(x0, eps, "flow_target");
    if (!(t_cont >= 0.0 && t_cont <= 1.0)) throw ArgumentError("flow_target: t outside [0, 1]");
    FlowPoint p{std::vector<double>(x0.size()), std::vector<double>(x0.size())};
    for (std::size_t i = 0; i < x0.size(); ++i) {
        p.x_t[i] = (1.0 - t_cont) * x0[i] + t_cont * eps[i];
        p.velocity[i] = eps[i] - x0[i];
    }
    return p;
}

ad::Tensor cfg_combine(const ad::Tensor& cond, const ad::Tensor& uncond, double scale) {
    if (cond.shape() != uncond.shape()) throw DimensionError("cfg_combine: prediction shapes differ");
    // The two endpoints are returned untouched so they hold bit for bit.
    if (scale == 1.0) return cond;
    if (scale == 0.0) return uncond;
    return ad::add(uncond, ad::scale(ad::sub(cond, uncond), scale));
}

}  // namespace latentlm::diffusion

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "latentlm/tensor.hpp"

namespace latentlm::diffusion {

enum class ScheduleKind { linear, cosine };
enum class Objective { epsilon, v, flow };

std::string to_string(ScheduleKind kind);
std::string to_string(Objective objective);
ScheduleKind parse_schedule_kind(const std::string& text);
Objective parse_objective(const std::string& text);

/// Discrete DDPM schedule over t = 1..T (1-based accessors). Also exposes a
/// continuous view over tau in [1, T] through the half log-SNR
/// lambda = 0.5 * log(alpha_bar / (1 - alpha_bar)), linearly interpolated
/// between integer steps; ODE solvers walk that view.
class NoiseSchedule {
public:
    static NoiseSchedule build(ScheduleKind kind, std::size_t T);
    /// Arbitrary betas (test hook); reported kind is linear.
    static NoiseSchedule from_betas(std::vector<double> betas);

    ScheduleKind kind() const { return kind_; }
    std::size_t steps() const { return beta_.size(); }
    double beta(std::size_t t) const;
    /// alpha_bar(0) == 1.
    double alpha_bar(std::size_t t) const;
    std::span<const double> betas() const { return beta_; }
    std::span<const double> alpha_bars() const { return alpha_bar_; }

    double lambda(double tau) const;
    double tau_of_lambda(double lambda) const;
    double alpha_bar_at(double tau) const;

    static double alpha_of_lambda(double lambda);
    static double sigma_of_lambda(double lambda);

private:
    NoiseSchedule(ScheduleKind kind, std::vector<double> betas);

    ScheduleKind kind_;
    std::vector<double> beta_;
    std::vector<double> alpha_bar_;
    std::vector<double> lambda_;
};

/// sqrt(ab_t) x0 + sqrt(1 - ab_t) eps
std::vector<double> forward_diffuse(std::span<const double> x0, std::size_t t, std::span<const double> eps,
                                    const NoiseSchedule& schedule);
std::vector<double> forward_diffuse(std::span<const double> x0, double alpha_bar, std::span<const double> eps);

/// sqrt(ab) eps - sqrt(1 - ab) x0
std::vector<double> v_target(std::span<const double> x0, std::span<const double> eps, double alpha_bar);
/// x0 = sqrt(ab) x_t - sqrt(1 - ab) v
std::vector<double> x0_from_v(std::span<const double> x_t, std::span<const double> v, double alpha_bar);
/// eps = sqrt(1 - ab) x_t + sqrt(ab) v
std::vector<double> eps_from_v(std::span<const double> x_t, std::span<const double> v, double alpha_bar);

struct FlowPoint {
    std::vector<double> x_t;
    std::vector<double> velocity;
};

/// Linear path x_t = (1 - t) x0 + t eps with velocity eps - x0.
FlowPoint flow_target(std::span<const double> x0, std::span<const double> eps, double t_cont);

/// uncond + scale * (cond - uncond)
ad::Tensor cfg_combine(const ad::Tensor& cond, const ad::Tensor& uncond, double scale);

}  // namespace latentlm::diffusion

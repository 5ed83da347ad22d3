#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "latentlm/tensor.hpp"

namespace latentlm {

struct NamedParam {
    std::string name;
    ad::Tensor tensor;
    bool decay = true;  // norm gains and biases opt out of weight decay
};

using ParamList = std::vector<NamedParam>;

std::size_t count_parameters(const ParamList& params);
void zero_grads(ParamList& params);

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    double weight_decay = 0.1;
};

struct Moments {
    std::vector<double> m;
    std::vector<double> v;
};

/// One decoupled-weight-decay Adam update with bias correction; `step` is the
/// 1-based index of this update.
void adamw_update(std::span<double> param, std::span<const double> grad, Moments& moments,
                  const AdamWConfig& cfg, double lr, std::uint64_t step, bool decay);

class AdamW {
public:
    AdamW(ParamList params, AdamWConfig cfg);

    /// Applies one update at learning rate `lr`. Throws NumericError before
    /// touching any parameter if a gradient is not finite.
    void step(double lr);
    void zero_grad();

    std::uint64_t step_count() const { return step_; }
    const AdamWConfig& config() const { return cfg_; }
    const ParamList& params() const { return params_; }
    const std::vector<Moments>& moments() const { return moments_; }
    void restore(std::vector<Moments> moments, std::uint64_t step);

private:
    ParamList params_;
    AdamWConfig cfg_;
    std::vector<Moments> moments_;
    std::uint64_t step_ = 0;
};

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(ParamList& params, double max_norm);

}  // namespace latentlm

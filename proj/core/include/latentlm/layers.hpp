#pragma once

#include <cstddef>
#include <string>

#include "latentlm/optim.hpp"
#include "latentlm/rng.hpp"
#include "latentlm/tensor.hpp"

namespace latentlm::nn {

inline constexpr double kInitStd = 0.02;

/// Trainable leaf filled from N(0, std^2); std == 0 gives zeros.
ad::Tensor normal_param(ad::Shape shape, double std, Rng& rng);

/// y = x W (+ b), W stored [in x out].
class Linear {
public:
    Linear() = default;
    Linear(std::size_t in, std::size_t out, bool bias, Rng& rng, double init_std = kInitStd);

    ad::Tensor operator()(const ad::Tensor& x) const;
    void collect(ParamList& out, const std::string& prefix) const;

    std::size_t in_features() const { return weight.defined() ? weight.shape()[0] : 0; }
    std::size_t out_features() const { return weight.defined() ? weight.shape()[1] : 0; }

    ad::Tensor weight;
    ad::Tensor bias;  // undefined when the layer has none
};

}  // namespace latentlm::nn

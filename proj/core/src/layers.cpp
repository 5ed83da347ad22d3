#include "latentlm/layers.hpp"

#include "latentlm/ops.hpp"

namespace latentlm::nn {

ad::Tensor normal_param(ad::Shape shape, double std, Rng& rng) {
    std::vector<double> values(ad::shape_numel(shape), 0.0);
    if (std > 0.0) {
        for (auto& v : values) v = std * rng.normal();
    }
    return ad::Tensor::from_data(std::move(shape), std::move(values), true);
}

Linear::Linear(std::size_t in, std::size_t out, bool bias, Rng& rng, double init_std)
    : weight(normal_param({in, out}, init_std, rng)) {
    if (bias) this->bias = ad::Tensor::zeros({out}, true);
}

ad::Tensor Linear::operator()(const ad::Tensor& x) const {
    auto y = ad::matmul(x, weight);
    return bias.defined() ? ad::add_row(y, bias) : y;
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight, true});
    if (bias.defined()) out.push_back({prefix + ".bias", bias, false});
}

}  // namespace latentlm::nn

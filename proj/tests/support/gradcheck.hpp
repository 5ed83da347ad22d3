#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "latentlm/ops.hpp"
#include "latentlm/rng.hpp"

namespace latentlm::testing {

struct GradCheck {
    double max_rel = 0.0;
    std::size_t checked = 0;
};

/// Central differences against backward() in 64-bit mode. The error of an
/// entry is |a - n| / max(|a|, |n|, floor). `max_entries` > 0 checks a random
/// subset of each input.
inline GradCheck check_gradients(const std::function<ad::Tensor()>& f, const std::vector<ad::Tensor>& inputs,
                                 Rng& pick, std::size_t max_entries = 0, double h = 1e-5, double floor = 1e-6) {
    ad::PrecisionScope f64(ad::Precision::f64);
    for (auto t : inputs) t.zero_grad();
    ad::backward(f());
    GradCheck out;
    for (auto t : inputs) {
        const std::vector<double> analytic =
            t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end()) : std::vector<double>(t.numel(), 0.0);
        std::vector<std::size_t> idx;
        if (max_entries == 0 || max_entries >= t.numel()) {
            for (std::size_t i = 0; i < t.numel(); ++i) idx.push_back(i);
        } else {
            for (std::size_t k = 0; k < max_entries; ++k) idx.push_back(pick.uniform_index(t.numel()));
        }
        auto data = t.mutable_data();
        for (auto i : idx) {
            const double saved = data[i];
            double fp, fm;
            {
                ad::NoGradScope ng;
                data[i] = saved + h;
                fp = f().item();
                data[i] = saved - h;
                fm = f().item();
            }
            data[i] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double rel = std::abs(analytic[i] - numeric) /
                               std::max({std::abs(analytic[i]), std::abs(numeric), floor});
            out.max_rel = std::max(out.max_rel, rel);
            ++out.checked;
        }
    }
    return out;
}

inline ad::Tensor random_tensor(ad::Shape shape, Rng& rng, bool requires_grad = true, double scale = 1.0) {
    std::vector<double> v(ad::shape_numel(shape));
    for (auto& x : v) x = scale * rng.normal();
    return ad::Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

/// sum(out * w) with a fixed random w: a generic scalar readout.
inline ad::Tensor readout(const ad::Tensor& out, const ad::Tensor& w) { return ad::sum(ad::mul(out, w)); }

}  // namespace latentlm::testing

#include "latentlm/head.hpp"

#include <algorithm>
#include <cmath>

#include "latentlm/errors.hpp"
#include "latentlm/ops.hpp"

namespace latentlm::diffusion {

void HeadConfig::validate() const {
    if (n_layers < 1) throw ConfigError("diffusion head: n_layers must be at least 1");
    if (d_latent == 0 || d_cond == 0 || width == 0) throw ConfigError("diffusion head: sizes must be positive");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0) {
        throw ConfigError("diffusion head: time_embed_dim must be even and >= 2");
    }
}

ad::Tensor timestep_embedding(std::span<const double> timesteps, std::size_t dim) {
    const std::size_t half = dim / 2;
    std::vector<double> out(timesteps.size() * dim);
    for (std::size_t r = 0; r < timesteps.size(); ++r) {
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            out[r * dim + i] = std::cos(timesteps[r] * freq);
            out[r * dim + half + i] = std::sin(timesteps[r] * freq);
        }
    }
    return ad::Tensor::from_data({timesteps.size(), dim}, std::move(out));
}

namespace {
double fan_in_std(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }
}  // namespace

DiffusionHead::DiffusionHead(const HeadConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t w = cfg.width;
    in_proj_ = nn::Linear(cfg.d_latent, w, true, rng, fan_in_std(cfg.d_latent));
    time_fc1_ = nn::Linear(cfg.time_embed_dim, w, true, rng, nn::kInitStd);
    time_fc2_ = nn::Linear(w, w, true, rng, nn::kInitStd);
    cond_proj_ = nn::Linear(cfg.d_cond, w, true, rng, fan_in_std(cfg.d_cond));
    blocks_.reserve(cfg.n_layers);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        AdaLnBlock b;
        b.modulation = nn::Linear(w, 3 * w, true, rng, 0.0);
        b.fc1 = nn::Linear(w, w, true, rng, fan_in_std(w));
        b.fc2 = nn::Linear(w, w, true, rng, fan_in_std(w));
        blocks_.push_back(std::move(b));
    }
    final_modulation_ = nn::Linear(w, 2 * w, true, rng, 0.0);
    out_proj_ = nn::Linear(w, cfg.d_latent, true, rng, 0.0);
}

ad::Tensor DiffusionHead::time_condition(std::span<const double> timesteps, std::size_t rows) const {
    if (timesteps.size() != rows) throw DimensionError("diffusion head: one timestep per row required");
    const bool shared = std::all_of(timesteps.begin(), timesteps.end(),
                                    [&](double t) { return t == timesteps.front(); });
    auto emb = shared ? timestep_embedding(timesteps.first(1), cfg_.time_embed_dim)
                      : timestep_embedding(timesteps, cfg_.time_embed_dim);
    return time_fc2_(ad::silu(time_fc1_(emb)));
}

ad::Tensor DiffusionHead::condition(const ad::Tensor& h) const {
    if (h.cols() != cfg_.d_cond) {
        throw DimensionError("diffusion head: condition " + ad::shape_string(h.shape()) + " is not [M x " +
                             std::to_string(cfg_.d_cond) + "]");
    }
    return cond_proj_(h);
}

ad::Tensor DiffusionHead::forward_conditioned(const ad::Tensor& x_t, std::span<const double> timesteps,
                                              const ad::Tensor& state_condition) const {
    const std::size_t w = cfg_.width, m = x_t.rows();
    if (x_t.cols() != cfg_.d_latent || state_condition.rows() != m || state_condition.cols() != w) {
        throw DimensionError("diffusion head: x_t " + ad::shape_string(x_t.shape()) + " / condition " +
                             ad::shape_string(state_condition.shape()) + " do not match the head");
    }
    if (m == 0) return ad::Tensor::zeros({0, cfg_.d_latent});
    auto tc = time_condition(timesteps, m);
    auto c = tc.rows() == m ? ad::add(state_condition, tc) : ad::add_row(state_condition, ad::reshape(tc, {w}));
    auto sc = ad::silu(c);

    auto x = in_proj_(x_t);
    for (const auto& block : blocks_) {
        auto mod = block.modulation(sc);
        auto shift = ad::slice_cols(mod, 0, w);
        auto scl = ad::slice_cols(mod, w, 2 * w);
        auto gate = ad::slice_cols(mod, 2 * w, 3 * w);
        auto y = ad::add(ad::mul(ad::rmsnorm(x), ad::add_scalar(scl, 1.0)), shift);
        y = block.fc2(ad::silu(block.fc1(y)));
        x = ad::add(x, ad::mul(gate, y));
    }
    auto mod = final_modulation_(sc);
    auto y = ad::add(ad::mul(ad::rmsnorm(x), ad::add_scalar(ad::slice_cols(mod, w, 2 * w), 1.0)),
                     ad::slice_cols(mod, 0, w));
    return out_proj_(y);
}

ad::Tensor DiffusionHead::forward(const ad::Tensor& x_t, std::span<const double> timesteps,
                                  const ad::Tensor& h) const {
    return forward_conditioned(x_t, timesteps, condition(h));
}

void DiffusionHead::collect(ParamList& out, const std::string& prefix) const {
    in_proj_.collect(out, prefix + ".in_proj");
    time_fc1_.collect(out, prefix + ".time_fc1");
    time_fc2_.collect(out, prefix + ".time_fc2");
    cond_proj_.collect(out, prefix + ".cond_proj");
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const auto p = prefix + ".blocks." + std::to_string(l);
        blocks_[l].modulation.collect(out, p + ".modulation");
        blocks_[l].fc1.collect(out, p + ".fc1");
        blocks_[l].fc2.collect(out, p + ".fc2");
    }
    final_modulation_.collect(out, prefix + ".final_modulation");
    out_proj_.collect(out, prefix + ".out_proj");
}

ad::Tensor diffusion_loss(const DiffusionHead& head, const NoiseSchedule& schedule, const ad::Tensor& x0,
                          const ad::Tensor& h, Rng& rng, std::size_t n_timesteps) {
    const auto& cfg = head.config();
    const std::size_t m = x0.rows(), d = cfg.d_latent;
    if (n_timesteps < 1) throw ArgumentError("diffusion_loss: n_timesteps must be at least 1");
    if (x0.cols() != d || h.rows() != m) throw DimensionError("diffusion_loss: x0 and h row counts differ");
    if (m == 0) throw ArgumentError("diffusion_loss: no rows");
    const std::size_t rows = m * n_timesteps;
    const double T = static_cast<double>(schedule.steps());

    std::vector<std::size_t> src(rows);
    std::vector<double> timesteps(rows), x_t(rows * d), target(rows * d);
    auto x0v = x0.data();
    std::vector<double> eps(d);
    for (std::size_t rep = 0; rep < n_timesteps; ++rep) {
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t r = rep * m + i;
            src[r] = i;
            auto xi = x0v.subspan(i * d, d);
            if (cfg.objective == Objective::flow) {
                const double tc = rng.uniform();
                for (auto& e : eps) e = rng.normal();
                auto fp = flow_target(xi, eps, tc);
                timesteps[r] = tc * T;
                std::copy(fp.x_t.begin(), fp.x_t.end(), x_t.begin() + static_cast<std::ptrdiff_t>(r * d));
                std::copy(fp.velocity.begin(), fp.velocity.end(), target.begin() + static_cast<std::ptrdiff_t>(r * d));
            } else {
                const std::size_t t = 1 + rng.uniform_index(schedule.steps());
                for (auto& e : eps) e = rng.normal();
                const double ab = schedule.alpha_bar(t);
                auto xt = forward_diffuse(xi, ab, eps);
                timesteps[r] = static_cast<double>(t);
                std::copy(xt.begin(), xt.end(), x_t.begin() + static_cast<std::ptrdiff_t>(r * d));
                if (cfg.objective == Objective::epsilon) {
                    std::copy(eps.begin(), eps.end(), target.begin() + static_cast<std::ptrdiff_t>(r * d));
                } else {
                    auto v = v_target(xi, eps, ab);
                    std::copy(v.begin(), v.end(), target.begin() + static_cast<std::ptrdiff_t>(r * d));
                }
            }
        }
    }
    auto cond = ad::gather_rows(head.condition(h), src);
    auto pred = head.forward_conditioned(ad::Tensor::from_data({rows, d}, std::move(x_t)), timesteps, cond);
    auto err = ad::sub(pred, ad::Tensor::from_data({rows, d}, std::move(target)));
    return ad::scale(ad::sum(ad::square(err)), 1.0 / static_cast<double>(rows));
}

}  // namespace latentlm::diffusion

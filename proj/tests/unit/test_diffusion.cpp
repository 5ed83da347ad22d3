#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "latentlm/errors.hpp"
#include "latentlm/head.hpp"
#include "latentlm/ops.hpp"
#include "latentlm/optim.hpp"
#include "latentlm/sampler.hpp"
#include "support/gradcheck.hpp"

using namespace latentlm;
using namespace latentlm::diffusion;
using ad::Tensor;
using latentlm::testing::check_gradients;
using latentlm::testing::random_tensor;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

void randomize(const DiffusionHead& head, Rng& rng, double std) {
    ParamList params;
    head.collect(params, "h");
    for (auto p : params)
        for (auto& v : p.tensor.mutable_data()) v = std * rng.normal();
}

// Exact epsilon for data N(m, s^2) at integer or fractional tau.
Denoiser gaussian_eps(const NoiseSchedule& sched, double m, double s, bool integer_steps) {
    return [&sched, m, s, integer_steps](const Tensor& x_t, double tau) {
        const double ab = integer_steps ? sched.alpha_bar(static_cast<std::size_t>(tau)) : sched.alpha_bar_at(tau);
        std::vector<double> e(x_t.numel());
        for (std::size_t i = 0; i < e.size(); ++i) {
            e[i] = std::sqrt(1.0 - ab) * (x_t.data()[i] - std::sqrt(ab) * m) / (ab * s * s + 1.0 - ab);
        }
        return Tensor::from_data(x_t.shape(), std::move(e));
    };
}

Tensor standard_normal(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return Tensor::from_data({n, 1}, std::move(v));
}

std::pair<double, double> mean_var(std::span<const double> v) {
    double s = 0.0, s2 = 0.0;
    for (double x : v) {
        s += x;
        s2 += x * x;
    }
    const double mean = s / v.size();
    return {mean, s2 / v.size() - mean * mean};
}

}  // namespace

TEST(Schedule, ConstantBetaProducts) {
    auto s = NoiseSchedule::from_betas({0.1, 0.1, 0.1});
    EXPECT_NEAR(s.alpha_bar(1), 0.9, 1e-15);
    EXPECT_NEAR(s.alpha_bar(2), 0.81, 1e-15);
    EXPECT_NEAR(s.alpha_bar(3), 0.729, 1e-15);
    EXPECT_EQ(s.alpha_bar(0), 1.0);
}

TEST(Schedule, AlphaBarStrictlyDecreasingAndBetasInRange) {
    for (auto kind : {ScheduleKind::linear, ScheduleKind::cosine}) {
        for (std::size_t T : {1u, 2u, 10u, 1000u}) {
            auto s = NoiseSchedule::build(kind, T);
            double prev = 1.0;
            for (std::size_t t = 1; t <= T; ++t) {
                EXPECT_GT(s.beta(t), 0.0);
                EXPECT_LT(s.beta(t), 1.0);
                EXPECT_LT(s.alpha_bar(t), prev);
                prev = s.alpha_bar(t);
            }
        }
    }
}

TEST(Schedule, CosineMatchesFormula) {
    auto s = NoiseSchedule::build(ScheduleKind::cosine, 1000);
    auto f = [](double t) {
        const double c = std::cos((t / 1000.0 + 0.008) / 1.008 * std::numbers::pi / 2.0);
        return c * c;
    };
    EXPECT_NEAR(s.alpha_bar(1), f(1.0) / f(0.0), 1e-12);
    EXPECT_NEAR(s.alpha_bar(500), f(500.0) / f(0.0), 1e-12);
    EXPECT_LE(s.beta(1000), 0.999);
}

TEST(Schedule, LinearEndpoints) {
    auto s = NoiseSchedule::build(ScheduleKind::linear, 1000);
    EXPECT_NEAR(s.beta(1), 1e-4, 1e-15);
    EXPECT_NEAR(s.beta(1000), 0.02, 1e-15);
}

TEST(Schedule, RejectsEmpty) { EXPECT_THROW(NoiseSchedule::build(ScheduleKind::cosine, 0), ArgumentError); }

TEST(Schedule, LambdaInverse) {
    auto s = NoiseSchedule::build(ScheduleKind::cosine, 1000);
    for (double tau : {1.0, 1.5, 17.25, 500.0, 999.9}) EXPECT_NEAR(s.tau_of_lambda(s.lambda(tau)), tau, 1e-9);
    EXPECT_NEAR(s.alpha_bar_at(250.0), s.alpha_bar(250), 1e-12);
}

TEST(ForwardDiffuse, ZeroNoiseScalesSignal) {
    const std::vector<double> x0 = {1.0, -2.0}, eps = {0.0, 0.0};
    auto xt = forward_diffuse(x0, 0.81, eps);
    EXPECT_NEAR(xt[0], 0.9, 1e-15);
    EXPECT_NEAR(xt[1], -1.8, 1e-15);
}

TEST(ForwardDiffuse, FullyNoisedLimitIsNoise) {
    auto s = NoiseSchedule::from_betas({0.999999, 0.999999, 0.999999});
    const std::vector<double> x0 = {5.0}, eps = {0.3};
    EXPECT_NEAR(forward_diffuse(x0, 3, eps, s)[0], 0.3, 1e-8);
}

TEST(ForwardDiffuse, HandEvaluation) {
    const std::vector<double> x0 = {2.0}, eps = {1.0};
    EXPECT_NEAR(forward_diffuse(x0, 0.25, eps)[0], 1.86603, 1e-5);
}

TEST(ForwardDiffuse, StepOutOfRange) {
    auto s = NoiseSchedule::build(ScheduleKind::cosine, 10);
    const std::vector<double> x0 = {1.0}, eps = {0.0};
    EXPECT_THROW(forward_diffuse(x0, 0, eps, s), IndexError);
    EXPECT_THROW(forward_diffuse(x0, 11, eps, s), IndexError);
}

TEST(VTarget, Limits) {
    const std::vector<double> x0 = {1.5, -0.5}, eps = {0.2, 0.7};
    EXPECT_EQ(v_target(x0, eps, 1.0), eps);
    auto v = v_target(x0, eps, 0.0);
    EXPECT_EQ(v[0], -1.5);
    EXPECT_EQ(v[1], 0.5);
}

TEST(VTarget, RoundTripRecoversSignalAndNoise) {
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        const double ab = rng.uniform();
        const std::vector<double> x0 = {rng.normal(), rng.normal()}, eps = {rng.normal(), rng.normal()};
        auto xt = forward_diffuse(x0, ab, eps);
        auto v = v_target(x0, eps, ab);
        auto back = x0_from_v(xt, v, ab);
        auto e = eps_from_v(xt, v, ab);
        for (int j = 0; j < 2; ++j) {
            EXPECT_NEAR(back[j], x0[j], 1e-6);
            EXPECT_NEAR(e[j], eps[j], 1e-6);
        }
    }
}

TEST(VTarget, EpsilonErrorIsScaledVError) {
    // eps_hat - eps = sqrt(ab) (v_hat - v), so the squared errors differ by ab.
    Rng rng(2);
    for (std::size_t t : {1u, 100u, 500u, 999u}) {
        const double ab = NoiseSchedule::build(ScheduleKind::cosine, 1000).alpha_bar(t);
        const std::vector<double> x0 = {rng.normal()}, eps = {rng.normal()}, v_hat = {rng.normal()};
        auto xt = forward_diffuse(x0, ab, eps);
        const double v_err = std::pow(v_hat[0] - v_target(x0, eps, ab)[0], 2);
        const double e_err = std::pow(eps_from_v(xt, v_hat, ab)[0] - eps[0], 2);
        EXPECT_NEAR(e_err, ab * v_err, 1e-10 * (1.0 + v_err));
    }
}

TEST(FlowTarget, Examples) {
    const std::vector<double> x0 = {0.4, -1.0};
    auto same = flow_target(x0, x0, 0.7);
    EXPECT_EQ(same.velocity, (std::vector<double>{0.0, 0.0}));
    EXPECT_EQ(same.x_t, x0);
    const std::vector<double> eps = {1.0, 2.0};
    EXPECT_EQ(flow_target(x0, eps, 0.0).x_t, x0);
    EXPECT_THROW(flow_target(x0, eps, 1.5), ArgumentError);
}

TEST(FlowTarget, EulerOnTrueVelocityRecoversData) {
    ad::PrecisionScope f64(ad::Precision::f64);
    const std::vector<double> x0 = {0.4, -1.0}, eps = {1.0, 2.0};
    const auto u = flow_target(x0, eps, 0.5).velocity;
    Denoiser velocity = [&](const Tensor& x, double) { return Tensor::from_data(x.shape(), u); };
    auto out = euler_flow_sample(velocity, Tensor::from_data({1, 2}, eps), 8, 1000.0);
    EXPECT_NEAR(out.data()[0], x0[0], 1e-12);
    EXPECT_NEAR(out.data()[1], x0[1], 1e-12);
}

TEST(CfgCombine, EndpointsAreExact) {
    Rng rng(3);
    auto c = random_tensor({4, 2}, rng, false), u = random_tensor({4, 2}, rng, false);
    EXPECT_EQ(values(cfg_combine(c, u, 1.0)), values(c));
    EXPECT_EQ(values(cfg_combine(c, u, 0.0)), values(u));
    auto g = cfg_combine(c, u, 2.0);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(g.data()[i], 2.0 * c.data()[i] - u.data()[i], 1e-6);
}

TEST(Head, ZeroMapAtInitialisation) {
    Rng rng(4);
    DiffusionHead head(HeadConfig{2, 8, 16, 2, 16, Objective::v}, rng);
    auto x = random_tensor({5, 2}, rng, false), h = random_tensor({5, 8}, rng, false);
    const std::vector<double> ts = {1, 10, 100, 500, 1000};
    for (double v : values(head.forward(x, ts, h))) EXPECT_EQ(v, 0.0);
}

TEST(Head, Deterministic) {
    Rng rng(5);
    DiffusionHead head(HeadConfig{2, 8, 16, 2, 16, Objective::v}, rng);
    randomize(head, rng, 0.3);
    auto x = random_tensor({3, 2}, rng, false), h = random_tensor({3, 8}, rng, false);
    const std::vector<double> ts = {3, 3, 9};
    EXPECT_EQ(values(head.forward(x, ts, h)), values(head.forward(x, ts, h)));
}

TEST(Head, GradientWrtInputMatchesFiniteDifferences) {
    Rng rng(6);
    DiffusionHead head(HeadConfig{2, 8, 16, 2, 16, Objective::v}, rng);
    randomize(head, rng, 0.3);
    auto x = random_tensor({3, 2}, rng), h = random_tensor({3, 8}, rng, false);
    const std::vector<double> ts = {5, 50, 500};
    auto r = check_gradients([&] { return ad::sum(ad::square(head.forward(x, ts, h))); }, {x}, rng);
    EXPECT_LT(r.max_rel, 1e-3);
}

TEST(DiffusionLoss, NonNegativeAndZeroHeadGivesMeanTargetEnergy) {
    // A fresh head predicts zero, so the loss is the mean squared target,
    // recomputed here from the same draw sequence.
    ad::PrecisionScope f64(ad::Precision::f64);
    auto sched = NoiseSchedule::build(ScheduleKind::cosine, 100);
    for (auto obj : {Objective::epsilon, Objective::v, Objective::flow}) {
        Rng init(7);
        DiffusionHead head(HeadConfig{2, 4, 8, 1, 8, obj}, init);
        Rng data(8);
        auto x0 = random_tensor({6, 2}, data, false), h = random_tensor({6, 4}, data, false);
        Rng a(9), b(9);
        const double loss = diffusion_loss(head, sched, x0, h, a, 3).item();
        double want = 0.0;
        for (int rep = 0; rep < 3; ++rep) {
            for (std::size_t i = 0; i < 6; ++i) {
                const std::vector<double> xi = {x0.at(i, 0), x0.at(i, 1)};
                std::vector<double> target;
                if (obj == Objective::flow) {
                    const double tc = b.uniform();
                    const std::vector<double> eps = {b.normal(), b.normal()};
                    target = flow_target(xi, eps, tc).velocity;
                } else {
                    const std::size_t t = 1 + b.uniform_index(100);
                    const std::vector<double> eps = {b.normal(), b.normal()};
                    target = obj == Objective::epsilon ? eps : v_target(xi, eps, sched.alpha_bar(t));
                }
                want += target[0] * target[0] + target[1] * target[1];
            }
        }
        EXPECT_GE(loss, 0.0);
        EXPECT_NEAR(loss, want / 18.0, 1e-9);
    }
}

TEST(DiffusionLoss, FrozenRandomHeadMatchesMonteCarloOracle) {
    auto sched = NoiseSchedule::build(ScheduleKind::cosine, 1000);
    Rng init(10);
    DiffusionHead head(HeadConfig{2, 4, 16, 2, 16, Objective::v}, init);
    randomize(head, init, 0.3);
    const std::vector<double> state = {0.5, -0.2, 0.1, 0.9};
    // Oracle: one row at a time, own draws, plain loops.
    Rng orng(11);
    double sum = 0.0;
    const std::size_t N = 40000;
    std::vector<double> xs(N * 2), ts(N), targets(N * 2);
    for (std::size_t n = 0; n < N; ++n) {
        const std::vector<double> x0 = {(orng.uniform() < 0.5 ? -1.0 : 1.0) + 0.3 * orng.normal(), orng.normal()};
        const std::size_t t = 1 + orng.uniform_index(1000);
        const std::vector<double> eps = {orng.normal(), orng.normal()};
        const double ab = sched.alpha_bar(t);
        for (int j = 0; j < 2; ++j) {
            xs[2 * n + j] = std::sqrt(ab) * x0[j] + std::sqrt(1 - ab) * eps[j];
            targets[2 * n + j] = std::sqrt(ab) * eps[j] - std::sqrt(1 - ab) * x0[j];
        }
        ts[n] = static_cast<double>(t);
    }
    std::vector<double> hs;
    for (std::size_t n = 0; n < N; ++n) hs.insert(hs.end(), state.begin(), state.end());
    {
        ad::NoGradScope ng;
        auto pred = head.forward(Tensor::from_data({N, 2}, xs), ts, Tensor::from_data({N, 4}, hs));
        for (std::size_t i = 0; i < 2 * N; ++i) sum += std::pow(pred.data()[i] - targets[i], 2);
    }
    const double oracle = sum / N;
    // Library estimate over a different sample of the same distribution.
    Rng drng(12);
    const std::size_t M = 10000;
    std::vector<double> x0s(M * 2), hm;
    for (std::size_t m = 0; m < M; ++m) {
        x0s[2 * m] = (drng.uniform() < 0.5 ? -1.0 : 1.0) + 0.3 * drng.normal();
        x0s[2 * m + 1] = drng.normal();
        hm.insert(hm.end(), state.begin(), state.end());
    }
    ad::NoGradScope ng;
    const double loss = diffusion_loss(head, sched, Tensor::from_data({M, 2}, x0s), Tensor::from_data({M, 4}, hm), drng, 4)
                            .item();
    EXPECT_NEAR(loss / oracle, 1.0, 0.02) << loss << " vs " << oracle;
}

TEST(Ancestral, ZeroEpsilonFollowsClosedForm) {
    ad::PrecisionScope f64(ad::Precision::f64);
    auto sched = NoiseSchedule::build(ScheduleKind::linear, 50);
    Denoiser zero = [](const Tensor& x, double) { return Tensor::zeros(x.shape()); };
    Rng rng(13);
    auto out = ancestral_sample(zero, Objective::epsilon, sched, Tensor::from_data({1, 2}, {0.5, -1.0}), rng, false);
    EXPECT_NEAR(out.data()[0], 0.5 / std::sqrt(sched.alpha_bar(50)), 1e-9);
    EXPECT_NEAR(out.data()[1], -1.0 / std::sqrt(sched.alpha_bar(50)), 1e-9);
}

TEST(Ancestral, SingleStepReturnsPosteriorMeanEstimate) {
    ad::PrecisionScope f64(ad::Precision::f64);
    auto sched = NoiseSchedule::from_betas({0.3});
    Denoiser fixed = [](const Tensor& x, double) { return Tensor::full(x.shape(), 0.25); };
    Rng rng(14);
    auto out = ancestral_sample(fixed, Objective::epsilon, sched, Tensor::from_data({1, 1}, {1.2}), rng);
    EXPECT_NEAR(out.item(), (1.2 - std::sqrt(0.3) * 0.25) / std::sqrt(0.7), 1e-12);
}

TEST(Ancestral, AnalyticDenoiserReproducesTargetMoments) {
    auto sched = NoiseSchedule::build(ScheduleKind::cosine, 1000);
    const double m = 0.7, s = 0.4;
    Rng rng(15);
    const std::size_t N = 10000;
    auto x = ancestral_sample(gaussian_eps(sched, m, s, true), Objective::epsilon, sched, standard_normal(N, rng), rng);
    auto [mean, var] = mean_var(x.data());
    EXPECT_NEAR(mean, m, 3.0 * s / std::sqrt(N));
    EXPECT_NEAR(var, s * s, 3.0 * s * s * std::sqrt(2.0 / N));
}

TEST(Ancestral, TrainedToyModelReproducesTrainingMoments) {
    // Data N(0.5, 0.6^2) in 1-D; the head sees a constant state.
    auto sched = NoiseSchedule::build(ScheduleKind::cosine, 100);
    Rng init(16);
    DiffusionHead head(HeadConfig{1, 2, 32, 2, 32, Objective::v}, init);
    ParamList params;
    head.collect(params, "head");
    AdamW opt(params, AdamWConfig{3e-3, 0.9, 0.98, 1e-8, 0.0});
    Rng rng(17);
    const std::size_t B = 256, steps = 2500;
    auto hb = Tensor::full({B, 2}, 1.0);
    for (std::size_t k = 0; k < steps; ++k) {
        std::vector<double> x(B);
        for (auto& v : x) v = 0.5 + 0.6 * rng.normal();
        opt.zero_grad();
        ad::backward(diffusion_loss(head, sched, Tensor::from_data({B, 1}, x), hb, rng, 1));
        clip_grad_norm(params, 1.0);
        opt.step(3e-3 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(k) / steps)));
    }
    const std::size_t N = 10000;
    SamplerConfig sc{SamplerMethod::ancestral, 100, 1, 1.0};
    auto z = sample_latents(head, sched, sc, Tensor::full({N, 2}, 1.0), Tensor{}, rng);
    auto [mean, var] = mean_var(z.data());
    EXPECT_NEAR(mean, 0.5, 3.0 * 0.6 / std::sqrt(N));
    // Fit error of a small head dominates sampling noise here; exact-score
    // moments are checked by AnalyticDenoiserReproducesTargetMoments.
    EXPECT_NEAR(var, 0.36, 0.1 * 0.36);
}

TEST(DpmSolver, OrderOneRecoversTargetMean) {
    ad::PrecisionScope f64(ad::Precision::f64);
    auto sched = NoiseSchedule::build(ScheduleKind::cosine, 1000);
    Rng rng(18);
    auto x = dpm_solver_sample(gaussian_eps(sched, 0.7, 0.4, false), Objective::epsilon, sched,
                               standard_normal(20000, rng), 200, 1);
    EXPECT_NEAR(mean_var(x.data()).first, 0.7, 0.007);
}

TEST(DpmSolver, OrderTwoBeatsOrderOneAtTwentySteps) {
    ad::PrecisionScope f64(ad::Precision::f64);
    auto sched = NoiseSchedule::build(ScheduleKind::cosine, 1000);
    const double m = 0.7, s = 0.4;
    Rng rng(19);
    auto xT = standard_normal(500, rng);
    const double lT = sched.lambda(1000.0), l0 = sched.lambda(1.0);
    const double aT = NoiseSchedule::alpha_of_lambda(lT), sT = NoiseSchedule::sigma_of_lambda(lT);
    const double a0 = NoiseSchedule::alpha_of_lambda(l0), s0 = NoiseSchedule::sigma_of_lambda(l0);
    auto error = [&](std::size_t order) {
        auto x = dpm_solver_sample(gaussian_eps(sched, m, s, false), Objective::epsilon, sched, xT, 20, order);
        double e = 0.0;
        for (std::size_t i = 0; i < 500; ++i) {
            const double exact =
                a0 * m + std::sqrt(a0 * a0 * s * s + s0 * s0) * (xT.data()[i] - aT * m) / std::sqrt(aT * aT * s * s + sT * sT);
            e += std::abs(x.data()[i] - exact);
        }
        return e;
    };
    EXPECT_LE(error(2), error(1));
}

TEST(DpmSolver, VHeadAndEpsilonHeadAgree) {
    ad::PrecisionScope f64(ad::Precision::f64);
    auto sched = NoiseSchedule::build(ScheduleKind::cosine, 1000);
    auto eps = gaussian_eps(sched, 0.7, 0.4, false);
    Denoiser as_v = [&](const Tensor& x, double tau) {
        const double ab = sched.alpha_bar_at(tau);
        auto e = eps(x, tau);
        std::vector<double> v(x.numel());
        for (std::size_t i = 0; i < v.size(); ++i) {
            // v = (eps - sqrt(1 - ab) x) / sqrt(ab)
            v[i] = (e.data()[i] - std::sqrt(1 - ab) * x.data()[i]) / std::sqrt(ab);
        }
        return Tensor::from_data(x.shape(), v);
    };
    Rng rng(20);
    auto xT = standard_normal(50, rng);
    for (std::size_t order : {1u, 2u}) {
        auto a = dpm_solver_sample(eps, Objective::epsilon, sched, xT, 20, order);
        auto b = dpm_solver_sample(as_v, Objective::v, sched, xT, 20, order);
        for (std::size_t i = 0; i < 50; ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-6);
    }
}

TEST(DpmSolver, StepsBelowOrderRejected) {
    auto sched = NoiseSchedule::build(ScheduleKind::cosine, 10);
    Denoiser zero = [](const Tensor& x, double) { return Tensor::zeros(x.shape()); };
    EXPECT_THROW(dpm_solver_sample(zero, Objective::epsilon, sched, Tensor::zeros({1, 1}), 1, 2), ArgumentError);
    SamplerConfig bad{SamplerMethod::dpm_solver, 1, 2, 1.0};
    EXPECT_THROW(bad.validate(sched, Objective::v), ArgumentError);
}

TEST(DpmSolver, EvaluationCountEqualsSteps) {
    auto sched = NoiseSchedule::build(ScheduleKind::cosine, 1000);
    for (std::size_t steps : {1u, 2u, 5u, 20u}) {
        for (std::size_t order : {1u, 2u}) {
            if (steps < order) continue;
            std::size_t calls = 0;
            Denoiser count = [&](const Tensor& x, double) {
                ++calls;
                return Tensor::zeros(x.shape());
            };
            dpm_solver_sample(count, Objective::epsilon, sched, Tensor::zeros({1, 1}), steps, order);
            EXPECT_EQ(calls, steps);
        }
    }
}

TEST(Guidance, UnitScaleNeverEvaluatesUnconditionalBranch) {
    Rng rng(21);
    DiffusionHead head(HeadConfig{2, 4, 8, 1, 8, Objective::v}, rng);
    randomize(head, rng, 0.3);
    auto sched = NoiseSchedule::build(ScheduleKind::cosine, 100);
    auto hc = random_tensor({3, 4}, rng, false);
    auto poison = Tensor::full({3, 4}, NAN);
    SamplerConfig sc{SamplerMethod::dpm_solver, 6, 2, 1.0};
    Rng a(22), b(22);
    auto with = sample_latents(head, sched, sc, hc, poison, a);
    auto without = sample_latents(head, sched, sc, hc, Tensor{}, b);
    EXPECT_EQ(values(with), values(without));
}

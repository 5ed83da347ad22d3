#include <gtest/gtest.h>

#include <cmath>

#include "latentlm/errors.hpp"
#include "latentlm/ops.hpp"
#include "latentlm/optim.hpp"
#include "support/gradcheck.hpp"

using namespace latentlm;
using ad::Tensor;
using latentlm::testing::check_gradients;
using latentlm::testing::random_tensor;
using latentlm::testing::readout;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    auto eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    auto m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(values(ad::matmul(eye, m)), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, ZeroOperandGivesZeros) {
    Rng rng(1);
    auto a = random_tensor({3, 4}, rng, false);
    auto out = ad::matmul(a, Tensor::zeros({4, 5}));
    EXPECT_EQ(out.shape(), (ad::Shape{3, 5}));
    for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, HandComputedProduct) {
    auto a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    auto b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
    EXPECT_EQ(values(ad::matmul(a, b)), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    try {
        ad::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
        FAIL();
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    }
}

TEST(Matmul, IdentityAssociativityIsExact) {
    Rng rng(2);
    auto a = random_tensor({3, 3}, rng, false), b = random_tensor({3, 2}, rng, false);
    auto eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    EXPECT_EQ(values(ad::matmul(ad::matmul(a, eye), b)), values(ad::matmul(a, ad::matmul(eye, b))));
}

TEST(Backward, PowerRule) {
    auto x = Tensor::scalar(3.0, true);
    ad::backward(ad::square(x));
    EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, SumGivesOnes) {
    auto x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    ad::backward(ad::sum(x));
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, RepeatedCallsAccumulate) {
    auto x = Tensor::scalar(3.0, true);
    ad::backward(ad::square(x));
    ad::backward(ad::square(x));
    EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
    x.zero_grad();
    EXPECT_FALSE(x.has_grad());
}

TEST(Backward, NonScalarLossIsContractViolation) {
    auto x = Tensor::from_data({2}, {1, 2}, true);
    EXPECT_THROW(ad::backward(ad::square(x)), ContractError);
}

TEST(Backward, ThreeLayerCompositeMatchesFiniteDifferences) {
    Rng rng(3);
    auto x = random_tensor({4, 3}, rng, false);
    auto w1 = random_tensor({3, 5}, rng), w2 = random_tensor({5, 5}, rng), w3 = random_tensor({5, 2}, rng);
    auto f = [&] { return ad::sum(ad::square(ad::matmul(ad::silu(ad::matmul(ad::silu(ad::matmul(x, w1)), w2)), w3))); };
    auto r = check_gradients(f, {w1, w2, w3}, rng);
    EXPECT_EQ(r.checked, 15u + 25u + 10u);
    EXPECT_LT(r.max_rel, 1e-3);
}

TEST(Backward, GradcheckDetectsWrongGradient) {
    // A hand-built op whose backward is off by a factor of two must be caught.
    Rng rng(4);
    auto x = random_tensor({3}, rng);
    auto bad_square = [](const Tensor& t) {
        std::vector<double> out(t.numel());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = t.data()[i] * t.data()[i];
        return ad::detail::make_result(t.shape(), out, {t}, [](ad::detail::Node& self) {
            auto* g = ad::detail::parent_grad(self, 0);
            const auto& in = self.parents[0]->value;
            for (std::size_t i = 0; i < in.size(); ++i) (*g)[i] += 4.0 * in[i] * self.grad[i];
        });
    };
    auto r = check_gradients([&] { return ad::sum(bad_square(x)); }, {x}, rng);
    EXPECT_GT(r.max_rel, 0.3);
}

TEST(Backward, NoGradScopeRecordsNothing) {
    auto x = Tensor::scalar(2.0, true);
    ad::NoGradScope ng;
    auto y = ad::square(x);
    EXPECT_FALSE(y.requires_grad());
}

TEST(SoftmaxCrossEntropy, UniformLogits) {
    EXPECT_NEAR(ad::softmax_cross_entropy(Tensor::zeros({4}), 1).item(), std::log(4.0), 1e-6);
}

TEST(SoftmaxCrossEntropy, SaturatedLogit) {
    EXPECT_NEAR(ad::softmax_cross_entropy(Tensor::from_data({3}, {30, 0, 0}), 0).item(), 0.0, 1e-12);
}

TEST(SoftmaxCrossEntropy, HandEvaluation) {
    EXPECT_NEAR(ad::softmax_cross_entropy(Tensor::from_data({3}, {1, 2, 3}), 2).item(), 0.40761, 1e-5);
}

TEST(SoftmaxCrossEntropy, TargetOutOfRange) {
    EXPECT_THROW(ad::softmax_cross_entropy(Tensor::zeros({3}), 3), IndexError);
}

TEST(SoftmaxCrossEntropy, NonNegativeAndStableForLargeLogits) {
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        std::vector<double> l(5);
        for (auto& v : l) v = 200.0 * rng.normal();
        const double ce = ad::softmax_cross_entropy(Tensor::from_data({5}, l), rng.uniform_index(5)).item();
        EXPECT_TRUE(std::isfinite(ce));
        EXPECT_GE(ce, 0.0);
    }
}

TEST(RmsNorm, ConstantVector) {
    for (double v : values(ad::rmsnorm(Tensor::from_data({3}, {2.5, 2.5, 2.5}), Tensor::full({3}, 1.0)))) {
        EXPECT_NEAR(v, 1.0, 1e-6);
    }
}

TEST(RmsNorm, ZeroStaysZero) {
    for (double v : values(ad::rmsnorm(Tensor::zeros({4}), Tensor::full({4}, 1.0)))) EXPECT_EQ(v, 0.0);
}

TEST(RmsNorm, HandEvaluation) {
    auto y = ad::rmsnorm(Tensor::from_data({2}, {3, 4}), Tensor::full({2}, 1.0));
    EXPECT_NEAR(y.data()[0], 0.84853, 1e-5);
    EXPECT_NEAR(y.data()[1], 1.13137, 1e-5);
}

TEST(Precision, F32RoundsAndF64DoesNot) {
    const double third = 1.0 / 3.0;
    EXPECT_EQ(Tensor::scalar(third).item(), static_cast<double>(static_cast<float>(third)));
    ad::PrecisionScope f64(ad::Precision::f64);
    EXPECT_EQ(Tensor::scalar(third).item(), third);
}

TEST(AdamW, ZeroGradientIsPureDecay) {
    std::vector<double> p = {2.0, -1.0}, g = {0.0, 0.0};
    Moments m{{0, 0}, {0, 0}};
    AdamWConfig cfg{1e-3, 0.9, 0.98, 1e-8, 0.1};
    adamw_update(p, g, m, cfg, 0.01, 1, true);
    EXPECT_FLOAT_EQ(p[0], 2.0 * (1 - 0.01 * 0.1));
    EXPECT_FLOAT_EQ(p[1], -1.0 * (1 - 0.01 * 0.1));
}

TEST(AdamW, FirstStepMovesBySignOfGradient) {
    std::vector<double> p = {1.0, 1.0}, g = {3.0, -0.002};
    Moments m{{0, 0}, {0, 0}};
    adamw_update(p, g, m, AdamWConfig{1e-3, 0.9, 0.98, 1e-8, 0.0}, 0.01, 1, true);
    EXPECT_NEAR(p[0], 1.0 - 0.01, 1e-8);
    EXPECT_NEAR(p[1], 1.0 + 0.01, 1e-5);
}

TEST(AdamW, ThreeScriptedStepsMatchHandOracle) {
    // Hand-stepped: lr 0.1, b1 0.9, b2 0.98, eps 1e-8, wd 0.1 on p0 = 1.
    const double lr = 0.1, b1 = 0.9, b2 = 0.98, eps = 1e-8, wd = 0.1;
    const double grads[3] = {0.5, -0.2, 0.3};
    double p_ref = 1.0, m_ref = 0.0, v_ref = 0.0;
    for (int t = 1; t <= 3; ++t) {
        p_ref *= 1.0 - lr * wd;
        m_ref = b1 * m_ref + (1 - b1) * grads[t - 1];
        v_ref = b2 * v_ref + (1 - b2) * grads[t - 1] * grads[t - 1];
        p_ref -= lr * (m_ref / (1 - std::pow(b1, t))) / (std::sqrt(v_ref / (1 - std::pow(b2, t))) + eps);
    }
    std::vector<double> p = {1.0};
    Moments m{{0}, {0}};
    for (int t = 1; t <= 3; ++t) {
        std::vector<double> g = {grads[t - 1]};
        adamw_update(p, g, m, AdamWConfig{lr, b1, b2, eps, wd}, lr, t, true);
    }
    EXPECT_NEAR(p[0], p_ref, 1e-6);
}

TEST(AdamW, DeterministicBitwise) {
    auto run = [] {
        std::vector<double> p = {0.3, -0.7, 1.1};
        Moments m{{0, 0, 0}, {0, 0, 0}};
        for (int t = 1; t <= 5; ++t) {
            std::vector<double> g = {0.1 * t, -0.3, 0.05 / t};
            adamw_update(p, g, m, AdamWConfig{}, 1e-2, t, true);
        }
        return p;
    };
    EXPECT_EQ(run(), run());
}

TEST(AdamW, NonFiniteGradientAbortsBeforeAnyUpdate) {
    auto a = Tensor::from_data({2}, {1.0, 2.0}, true), b = Tensor::from_data({1}, {3.0}, true);
    ParamList params{{"a", a, true}, {"b", b, true}};
    AdamW opt(params, AdamWConfig{});
    ad::backward(ad::add(ad::sum(ad::square(a)), ad::sum(ad::scale(b, NAN))));
    EXPECT_THROW(opt.step(1e-2), NumericError);
    EXPECT_EQ(values(a), (std::vector<double>{1.0, 2.0}));
    EXPECT_EQ(values(b), (std::vector<double>{3.0}));
    EXPECT_EQ(opt.step_count(), 0u);
}

TEST(ClipGradNorm, ScalesToMaxNorm) {
    auto a = Tensor::from_data({2}, {0, 0}, true);
    ParamList params{{"a", a, true}};
    ad::backward(readout(a, Tensor::from_data({2}, {3.0, 4.0})));
    EXPECT_DOUBLE_EQ(clip_grad_norm(params, 1.0), 5.0);
    EXPECT_NEAR(a.grad()[0], 0.6, 1e-12);
    EXPECT_NEAR(a.grad()[1], 0.8, 1e-12);
}

class OpGradients : public ::testing::TestWithParam<int> {};

TEST_P(OpGradients, RandomShapesMatchFiniteDifferences) {
    Rng rng(static_cast<std::uint64_t>(GetParam()));
    const std::size_t m = 1 + rng.uniform_index(4), n = 1 + rng.uniform_index(4), k = 1 + rng.uniform_index(4);
    auto a = random_tensor({m, n}, rng), b = random_tensor({m, n}, rng), w = random_tensor({m, n}, rng, false);
    auto ma = random_tensor({m, k}, rng), mb = random_tensor({k, n}, rng);
    auto gain = random_tensor({n}, rng);
    EXPECT_LT(check_gradients([&] { return readout(ad::mul(ad::sigmoid(a), ad::exp(b)), w); }, {a, b}, rng).max_rel, 1e-3);
    EXPECT_LT(check_gradients([&] { return readout(ad::add(ad::matmul(ma, mb), a), w); }, {ma, mb, a}, rng).max_rel, 1e-3);
    EXPECT_LT(check_gradients([&] { return readout(ad::softmax_rows(ad::rmsnorm(a, gain)), w); }, {a, gain}, rng).max_rel,
              1e-3);
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradients, ::testing::Range(0, 20));

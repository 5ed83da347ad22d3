#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "latentlm/errors.hpp"
#include "latentlm/ops.hpp"
#include "latentlm/sigma_vae.hpp"
#include "latentlm/tasks.hpp"
#include "support/gradcheck.hpp"

using namespace latentlm;
using namespace latentlm::vae;
using ad::Tensor;
using latentlm::testing::random_tensor;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

VaeConfig small(VariancePolicy policy) {
    VaeConfig c;
    c.d_input = 4;
    c.d_latent = 2;
    c.policy = policy;
    c.hidden = 8;
    return c;
}

void zero(nn::Linear& l) {
    for (auto& v : l.weight.mutable_data()) v = 0.0;
    if (l.bias.defined())
        for (auto& v : l.bias.mutable_data()) v = 0.0;
}

double pca_mse(const Tensor& train, const Tensor& test, std::size_t k) {
    const auto d = static_cast<Eigen::Index>(train.cols());
    Eigen::MatrixXd X(train.rows(), d), Y(test.rows(), d);
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        for (Eigen::Index j = 0; j < d; ++j) X(i, j) = train.at(i, j);
    for (Eigen::Index i = 0; i < Y.rows(); ++i)
        for (Eigen::Index j = 0; j < d; ++j) Y(i, j) = test.at(i, j);
    const Eigen::RowVectorXd mean = X.colwise().mean();
    const Eigen::MatrixXd Xc = X.rowwise() - mean;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Xc.transpose() * Xc / static_cast<double>(X.rows() - 1));
    const Eigen::MatrixXd U = eig.eigenvectors().rightCols(static_cast<Eigen::Index>(k));
    const Eigen::MatrixXd Yc = Y.rowwise() - mean;
    return (Yc - Yc * U * U.transpose()).squaredNorm() / static_cast<double>(Y.rows());
}

}  // namespace

TEST(Encode, ZeroFinalLayerGivesZeroMean) {
    Rng rng(1);
    SigmaVae model(small(VariancePolicy::sampled(0.25)), rng);
    zero(model.encoder().back());
    for (double v : values(model.encode(random_tensor({5, 4}, rng, false)))) EXPECT_EQ(v, 0.0);
}

TEST(Encode, DeterministicAndVanillaReturnsLogVariance) {
    Rng rng(2);
    SigmaVae model(small(VariancePolicy::learned()), rng);
    auto x = random_tensor({3, 4}, rng, false);
    auto a = model.encode_full(x), b = model.encode_full(x);
    EXPECT_EQ(values(a.mu), values(b.mu));
    ASSERT_TRUE(a.logvar.defined());
    EXPECT_EQ(a.logvar.shape(), (ad::Shape{3, 2}));
    SigmaVae sigma(small(VariancePolicy::sampled(0.25)), rng);
    EXPECT_FALSE(sigma.encode_full(x).logvar.defined());
}

TEST(SampleSigma, ZeroVarianceAndFixed) {
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        EXPECT_EQ(sample_sigma(rng, VariancePolicy::sampled(0.0)), 0.0);
        EXPECT_EQ(sample_sigma(rng, VariancePolicy::fixed(0.5)), 0.5);
    }
}

TEST(SampleSigma, SampledStandardDeviation) {
    Rng rng(4);
    double s2 = 0.0;
    const int N = 100000;
    for (int i = 0; i < N; ++i) s2 += std::pow(sample_sigma(rng, VariancePolicy::sampled(0.25)), 2);
    EXPECT_NEAR(std::sqrt(s2 / N), 0.5, 0.01);
}

TEST(Reparameterize, Examples) {
    auto mu = Tensor::from_data({1, 2}, {0.3, -0.4});
    EXPECT_EQ(values(reparameterize(mu, 0.0, Tensor::from_data({1, 2}, {1.0, 2.0}))), values(mu));
    EXPECT_EQ(values(reparameterize(mu, 0.7, Tensor::zeros({1, 2}))), values(mu));
    EXPECT_EQ(values(reparameterize(Tensor::zeros({1, 2}), 2.0, Tensor::from_data({1, 2}, {1.0, -1.0}))),
              (std::vector<double>{2.0, -2.0}));
}

TEST(Reparameterize, PerRowSigmaBroadcastsOverChannels) {
    auto mu = Tensor::zeros({2, 2});
    const std::vector<double> sig = {1.0, 3.0};
    auto z = reparameterize(mu, sig, Tensor::full({2, 2}, 1.0));
    EXPECT_EQ(values(z), (std::vector<double>{1.0, 1.0, 3.0, 3.0}));
}

TEST(Reparameterize, StandardisedNoiseIsStandardNormal) {
    Rng rng(5);
    const std::size_t N = 10000;
    auto mu = random_tensor({N, 2}, rng, false);
    std::vector<double> sig(N), eps(2 * N);
    for (auto& s : sig) s = sample_sigma(rng, VariancePolicy::sampled(0.25));
    for (auto& e : eps) e = rng.normal();
    auto z = reparameterize(mu, sig, Tensor::from_data({N, 2}, eps));
    for (std::size_t j = 0; j < 2; ++j) {
        double s = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            const double u = (z.at(i, j) - mu.at(i, j)) / sig[i];
            s += u;
            s2 += u * u;
        }
        const double mean = s / N;
        EXPECT_LE(std::abs(mean), 3.0 / std::sqrt(1e4));
        EXPECT_GE(s2 / N - mean * mean, 0.95);
        EXPECT_LE(s2 / N - mean * mean, 1.05);
    }
}

TEST(Reparameterize, NegativeSigmaMatchesAbsoluteSigmaInDistribution) {
    Rng a(6), b(7);
    const std::size_t N = 10000;
    double sa = 0, sa2 = 0, sb = 0, sb2 = 0;
    for (std::size_t i = 0; i < N; ++i) {
        const double s = -0.8;
        const double za = reparameterize(Tensor::zeros({1, 1}), s, Tensor::from_data({1, 1}, {a.normal()})).item();
        const double zb = reparameterize(Tensor::zeros({1, 1}), std::abs(s), Tensor::from_data({1, 1}, {b.normal()})).item();
        sa += za;
        sa2 += za * za;
        sb += zb;
        sb2 += zb * zb;
    }
    EXPECT_NEAR(sa / N, sb / N, 4.0 * 0.8 * std::sqrt(2.0 / N));
    EXPECT_NEAR(sa2 / N, sb2 / N, 4.0 * 0.64 * std::sqrt(4.0 / N));
}

TEST(Decode, ZeroFinalLayerAndDeterminism) {
    Rng rng(8);
    SigmaVae model(small(VariancePolicy::sampled(0.25)), rng);
    auto z = random_tensor({3, 2}, rng, false);
    EXPECT_EQ(values(model.decode(z)), values(model.decode(z)));
    zero(model.decoder().back());
    for (double v : values(model.decode(z))) EXPECT_EQ(v, 0.0);
}

TEST(VaeLoss, Examples) {
    Rng rng(9);
    auto x = random_tensor({3, 2}, rng, false), mu = random_tensor({3, 1}, rng, false);
    EXPECT_EQ(vae_loss(x, x, Tensor::zeros({3, 1}), 0.5).item(), 0.0);
    EXPECT_EQ(vae_loss(x, x, mu, 0.0).item(), 0.0);
    EXPECT_NEAR(vae_loss(Tensor::from_data({1, 2}, {1, 0}), Tensor::zeros({1, 2}), Tensor::from_data({1, 1}, {1}), 0.5)
                    .item(),
                1.5, 1e-12);
}

TEST(VaeLoss, GradientWrtMeanIsTwoBetaMu) {
    ad::PrecisionScope f64(ad::Precision::f64);
    auto mu = Tensor::from_data({1, 3}, {0.4, -1.2, 2.0}, true);
    ad::backward(vae_loss(Tensor::from_data({1, 2}, {1, 2}), Tensor::from_data({1, 2}, {0, 1}), mu, 0.3));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(mu.grad()[i], 2.0 * 0.3 * mu.data()[i], 1e-12);
}

TEST(VaeLoss, VanillaKlTerm) {
    // KL(N(1, e^0) || N(0, 1)) = 0.5 per channel.
    auto kl = vanilla_vae_loss(Tensor::zeros({1, 2}), Tensor::zeros({1, 2}), Tensor::from_data({1, 1}, {1.0}),
                               Tensor::zeros({1, 1}), 2.0);
    EXPECT_NEAR(kl.item(), 1.0, 1e-12);
}

TEST(VarianceReport, FixedSigmaNoiseVariance) {
    Rng rng(10);
    SigmaVae model(small(VariancePolicy::fixed(0.5)), rng);
    auto data = random_tensor({10000, 4}, rng, false);
    auto rep = latent_variance_report(model, data, rng);
    for (double v : rep.var_noise) EXPECT_NEAR(v, 0.25, 0.0125);
    EXPECT_EQ(rep.collapsed_count(), 0u);
}

TEST(VarianceReport, ZeroSigmaOnConstantDataCollapsesEverything) {
    Rng rng(11);
    SigmaVae model(small(VariancePolicy::fixed(0.0)), rng);
    auto rep = latent_variance_report(model, Tensor::full({100, 4}, 0.7), rng);
    EXPECT_EQ(rep.collapsed_count(), 2u);
}

TEST(VarianceReport, EmptyDataRejected) {
    Rng rng(12);
    SigmaVae model(small(VariancePolicy::fixed(0.5)), rng);
    EXPECT_THROW(latent_variance_report(model, Tensor::zeros({0, 4}), rng), ArgumentError);
}

class LinearGaussianFit : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        Rng rng(13);
        train_ = task_.sample(4096, rng);
        test_ = task_.sample(1024, rng);
    }
    static SigmaVae fit(VariancePolicy policy, double beta) {
        VaeConfig c;
        c.d_input = task_.d_input;
        c.d_latent = 2;
        c.policy = policy;
        c.beta_vae = beta;
        c.hidden_layers = 0;
        Rng init(14);
        SigmaVae model(c, init);
        VaeTrainConfig tc;
        tc.steps = 3000;
        tc.batch_size = 128;
        tc.lr = 1e-2;
        tc.seed = 15;
        train_vae(model, train_, tc);
        return model;
    }
    static inline data::LinearGaussianTask task_;
    static inline Tensor train_, test_;
};

TEST_F(LinearGaussianFit, ReconstructionWithinPcaOracleMargin) {
    auto model = fit(VariancePolicy::sampled(0.25), 1e-4);
    const double mse = model.reconstruction_mse(test_);
    EXPECT_LE(mse, 1.1 * pca_mse(train_, test_, 2));
    EXPECT_LT(mse, 0.05);
}

TEST_F(LinearGaussianFit, VanillaCollapsesWhereSigmaVaeDoesNot) {
    auto sigma = fit(VariancePolicy::sampled(0.25), 1e-4);
    auto vanilla = fit(VariancePolicy::learned(), 1e-3);
    Rng rng(16);
    auto rv = latent_variance_report(vanilla, test_, rng), rs = latent_variance_report(sigma, test_, rng);
    EXPECT_GE(rv.collapsed_count(), 1u);
    EXPECT_EQ(rs.collapsed_count(), 0u);
    const double a = vanilla.reconstruction_mse(test_), b = sigma.reconstruction_mse(test_);
    EXPECT_LE(std::max(a, b) / std::min(a, b), 1.25);
}

TEST(TrainVae, DeterministicGivenSeed) {
    Rng d(17);
    data::LinearGaussianTask task;
    auto data = task.sample(256, d);
    auto run = [&] {
        VaeConfig c = small(VariancePolicy::sampled(0.25));
        c.d_input = 8;
        Rng init(18);
        SigmaVae m(c, init);
        VaeTrainConfig tc;
        tc.steps = 20;
        return train_vae(m, data, tc);
    };
    EXPECT_EQ(run(), run());
}

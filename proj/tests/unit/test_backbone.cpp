#include <gtest/gtest.h>

#include <cmath>

#include "latentlm/backbone.hpp"
#include "latentlm/errors.hpp"
#include "latentlm/ops.hpp"
#include "support/gradcheck.hpp"

using namespace latentlm;
using ad::Tensor;
using latentlm::testing::random_tensor;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) d = std::max(d, std::abs(a.data()[i] - b.data()[i]));
    return d;
}

nn::BackboneConfig small_config(std::size_t kv = 2, std::size_t layers = 2) {
    return {16, layers, 4, kv, 32, 32, 10000.0};
}

void randomize(const ParamList& params, Rng& rng, double std) {
    for (auto p : params)
        for (auto& v : p.tensor.mutable_data()) v = std * rng.normal();
}

}  // namespace

TEST(Rope, PositionZeroIsIdentity) {
    Rng rng(1);
    auto x = random_tensor({1, 8}, rng, false);
    auto y = nn::rope_apply(x, 2, 0, 10000.0);
    EXPECT_EQ(std::vector<double>(x.data().begin(), x.data().end()), std::vector<double>(y.data().begin(), y.data().end()));
}

TEST(Rope, PreservesPairNorms) {
    ad::PrecisionScope f64(ad::Precision::f64);
    Rng rng(2);
    auto x = random_tensor({5, 8}, rng, false);
    auto y = nn::rope_apply(x, 2, 13, 10000.0);
    for (std::size_t r = 0; r < 5; ++r) {
        for (std::size_t i = 0; i < 8; i += 2) {
            EXPECT_NEAR(std::hypot(x.at(r, i), x.at(r, i + 1)), std::hypot(y.at(r, i), y.at(r, i + 1)), 1e-12);
        }
    }
}

TEST(Rope, DotProductDependsOnlyOnOffset) {
    ad::PrecisionScope f64(ad::Precision::f64);
    Rng rng(3);
    auto q = random_tensor({1, 8}, rng, false), k = random_tensor({1, 8}, rng, false);
    for (std::size_t delta : {0u, 1u, 5u}) {
        std::vector<double> dots;
        for (std::size_t p : {0u, 7u, 31u}) {
            auto rq = nn::rope_apply(q, 1, p, 10000.0), rk = nn::rope_apply(k, 1, p + delta, 10000.0);
            double d = 0.0;
            for (std::size_t i = 0; i < 8; ++i) d += rq.data()[i] * rk.data()[i];
            dots.push_back(d);
        }
        EXPECT_NEAR(dots[0], dots[1], 1e-10);
        EXPECT_NEAR(dots[0], dots[2], 1e-10);
    }
}

TEST(Rope, OddHeadDimIsConfigError) {
    EXPECT_THROW(nn::rope_apply(Tensor::zeros({1, 6}), 2, 0, 10000.0), ConfigError);
    nn::BackboneConfig cfg{12, 1, 4, 4, 8, 8, 10000.0};
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Attention, SingleTokenReturnsItsValue) {
    Rng rng(4);
    auto q = random_tensor({1, 8}, rng, false), k = random_tensor({1, 4}, rng, false), v = random_tensor({1, 4}, rng, false);
    auto out = ad::attention(q, k, v, {2, 1, 4, true, {{0, 1, {}}}});
    for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(out.at(0, h * 4 + j), v.at(0, j));
}

TEST(Attention, EqualScoresAverageTheValues) {
    ad::PrecisionScope f64(ad::Precision::f64);
    Rng rng(5);
    auto k = random_tensor({3, 2}, rng, false), v = random_tensor({3, 2}, rng, false);
    auto out = ad::attention(Tensor::zeros({3, 2}), k, v, {1, 1, 2, false, {{0, 3, {}}}});
    for (std::size_t j = 0; j < 2; ++j) {
        const double mean = (v.at(0, j) + v.at(1, j) + v.at(2, j)) / 3.0;
        for (std::size_t r = 0; r < 3; ++r) EXPECT_NEAR(out.at(r, j), mean, 1e-12);
    }
}

TEST(Attention, GroupedHeadsMatchReplicatedKeysBitwise) {
    Rng rng(6);
    const std::size_t H = 4, G = 2, hd = 2, R = 5;
    auto q = random_tensor({R, H * hd}, rng, false);
    auto k = random_tensor({R, G * hd}, rng, false), v = random_tensor({R, G * hd}, rng, false);
    std::vector<double> kr(R * H * hd), vr(R * H * hd);
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t j = 0; j < hd; ++j) {
                kr[(r * H + h) * hd + j] = k.at(r, (h / (H / G)) * hd + j);
                vr[(r * H + h) * hd + j] = v.at(r, (h / (H / G)) * hd + j);
            }
    auto grouped = ad::attention(q, k, v, {H, G, hd, true, {{0, R, {}}}});
    auto full = ad::attention(q, Tensor::from_data({R, H * hd}, kr), Tensor::from_data({R, H * hd}, vr),
                              {H, H, hd, true, {{0, R, {}}}});
    EXPECT_EQ(max_abs_diff(grouped, full), 0.0);
}

TEST(KvCache, OverflowIsCapacityError) {
    auto cfg = small_config();
    cfg.max_seq_len = 4;
    Rng rng(7);
    nn::Transformer tf(cfg, rng);
    nn::KVCache cache(cfg);
    tf.forward(random_tensor({3, 16}, rng, false), &cache);
    EXPECT_THROW(tf.forward(random_tensor({2, 16}, rng, false), &cache), CapacityError);
    EXPECT_THROW(tf.forward(random_tensor({5, 16}, rng, false)), CapacityError);
}

TEST(SwiGlu, ZeroInputGivesZero) {
    Rng rng(8);
    nn::SwiGlu f(4, 6, rng);
    for (double v : values(f(Tensor::zeros({1, 4})))) EXPECT_EQ(v, 0.0);
}

TEST(SwiGlu, ZeroGateGivesZero) {
    Rng rng(9);
    nn::SwiGlu f(4, 6, rng);
    for (auto& v : f.gate.weight.mutable_data()) v = 0.0;
    for (double v : values(f(random_tensor({3, 4}, rng, false)))) EXPECT_EQ(v, 0.0);
}

TEST(SwiGlu, MatchesHandEvaluation) {
    ad::PrecisionScope f64(ad::Precision::f64);
    Rng rng(10);
    nn::SwiGlu f(4, 3, rng);
    randomize([&] { ParamList p; f.collect(p, "f"); return p; }(), rng, 0.5);
    auto x = random_tensor({1, 4}, rng, false);
    auto y = f(x);
    auto W = [](const nn::Linear& l, std::size_t i, std::size_t o) { return l.weight.at(i, o); };
    std::vector<double> hidden(3);
    for (std::size_t o = 0; o < 3; ++o) {
        double g = 0.0, u = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            g += x.data()[i] * W(f.gate, i, o);
            u += x.data()[i] * W(f.up, i, o);
        }
        hidden[o] = g / (1.0 + std::exp(-g)) * u;
    }
    for (std::size_t o = 0; o < 4; ++o) {
        double want = 0.0;
        for (std::size_t i = 0; i < 3; ++i) want += hidden[i] * W(f.down, i, o);
        EXPECT_NEAR(y.data()[o], want, 1e-6);
    }
}

TEST(Transformer, EmptyStackIsFinalNorm) {
    Rng rng(11);
    nn::Transformer tf(small_config(2, 0), rng);
    auto x = random_tensor({3, 16}, rng, false);
    auto want = ad::rmsnorm(x, tf.final_norm());
    EXPECT_EQ(max_abs_diff(tf.forward(x), want), 0.0);
}

TEST(Transformer, CausalityUnderPerturbation) {
    Rng rng(12);
    nn::Transformer tf(small_config(), rng);
    auto x = random_tensor({6, 16}, rng, false);
    auto base = tf.forward(x);
    auto xp = x.clone();
    for (std::size_t j = 0; j < 16; ++j) xp.mutable_data()[4 * 16 + j] += 1.0;
    auto pert = tf.forward(xp);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(base.at(r, j), pert.at(r, j));
    double moved = 0.0;
    for (std::size_t j = 0; j < 16; ++j) moved += std::abs(base.at(5, j) - pert.at(5, j));
    EXPECT_GT(moved, 0.0);
}

TEST(Transformer, CausalityByAutodiff) {
    Rng rng(13);
    nn::Transformer tf(small_config(), rng);
    auto x = random_tensor({5, 16}, rng);
    // d h_1 / d x: only rows 0 and 1 may receive gradient.
    ad::backward(ad::sum(ad::slice_rows(tf.forward(x), 1, 2)));
    for (std::size_t r = 2; r < 5; ++r)
        for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(x.grad()[r * 16 + j], 0.0);
}

class CacheEquivalence : public ::testing::TestWithParam<std::size_t> {};

TEST_P(CacheEquivalence, IncrementalMatchesBatch) {
    Rng rng(14 + GetParam());
    auto cfg = small_config(GetParam());
    nn::Transformer tf(cfg, rng);
    auto x = random_tensor({16, 16}, rng, false);
    auto batch = tf.forward(x);
    nn::KVCache cache(cfg);
    double worst = 0.0;
    for (std::size_t i = 0; i < 16; ++i) {
        auto h = tf.forward(ad::slice_rows(x, i, i + 1), &cache);
        for (std::size_t j = 0; j < 16; ++j) worst = std::max(worst, std::abs(h.at(0, j) - batch.at(i, j)));
    }
    EXPECT_LT(worst, 1e-5);
    EXPECT_EQ(cache.filled(), 16u);
}

INSTANTIATE_TEST_SUITE_P(KvHeads, CacheEquivalence, ::testing::Values(1, 2, 4));

TEST(Transformer, PackedSegmentsAreIndependent) {
    Rng rng(15);
    nn::Transformer tf(small_config(), rng);
    auto a = random_tensor({3, 16}, rng, false), b = random_tensor({4, 16}, rng, false);
    const Tensor parts[2] = {a, b};
    const std::size_t lens[2] = {3, 4};
    auto packed = tf.forward(ad::concat_rows(parts), lens);
    EXPECT_LT(max_abs_diff(ad::slice_rows(packed, 0, 3), tf.forward(a)), 1e-6);
    EXPECT_LT(max_abs_diff(ad::slice_rows(packed, 3, 7), tf.forward(b)), 1e-6);
}

TEST(Transformer, CachedRowCountGrowsLinearly) {
    Rng rng(16);
    auto cfg = small_config();
    nn::Transformer tf(cfg, rng);
    nn::KVCache cache(cfg);
    tf.reset_counters();
    for (std::size_t i = 0; i < 10; ++i) {
        tf.forward(random_tensor({1, 16}, rng, false), &cache);
        EXPECT_EQ(tf.rows_processed(), i + 1);
        EXPECT_EQ(tf.forward_calls(), i + 1);
    }
}

TEST(Transformer, InitialisationDefaults) {
    Rng rng(17);
    nn::Transformer tf(small_config(), rng);
    for (double g : tf.final_norm().data()) EXPECT_EQ(g, 1.0);
    ParamList params;
    tf.collect(params, "t");
    double s = 0.0, s2 = 0.0;
    std::size_t n = 0;
    for (const auto& p : params) {
        if (p.name.find("norm") != std::string::npos) continue;
        for (double v : p.tensor.data()) {
            s += v;
            s2 += v * v;
            ++n;
        }
    }
    EXPECT_NEAR(std::sqrt(s2 / n - (s / n) * (s / n)), 0.02, 0.002);
}

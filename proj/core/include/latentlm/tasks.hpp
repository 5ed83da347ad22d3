#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "latentlm/rng.hpp"
#include "latentlm/sequence.hpp"
#include "latentlm/tensor.hpp"

namespace latentlm::data {

struct MarkovGrammar {
    std::size_t n_states = 0;
    std::vector<double> transition;  // row-stochastic, [n_states x n_states]
    std::vector<double> start;

    /// Throws ArgumentError on negative entries or rows not summing to 1.
    void validate() const;
    double p(std::size_t from, std::size_t to) const { return transition[from * n_states + to]; }
};

/// P rows [0.7,0.2,0.1], [0.1,0.8,0.1], [0.25,0.25,0.5], uniform start.
MarkovGrammar three_state_grammar();

std::vector<std::size_t> gen_markov_states(const MarkovGrammar& g, std::size_t length, std::uint64_t seed);
/// States mapped onto the vocabulary's text tokens.
std::vector<TokenId> gen_markov_text(const MarkovGrammar& g, std::size_t length, std::uint64_t seed,
                                     const Vocabulary& vocab);

/// Stationary distribution by power iteration on the lazy chain (I + P) / 2,
/// which shares it and is aperiodic. Throws ArgumentError when reducible.
std::vector<double> stationary_distribution(const MarkovGrammar& g);
/// -sum_i pi_i sum_j P_ij log P_ij, in nats per token.
double grammar_entropy_rate(const MarkovGrammar& g);

struct GmmComponent {
    std::vector<double> mean;
    std::vector<double> var;  // diagonal
    double weight = 1.0;
};

struct GmmTask {
    std::size_t d_latent = 2;
    std::vector<std::vector<GmmComponent>> classes;

    std::size_t n_classes() const { return classes.size(); }
    void validate() const;
    double log_density(std::size_t class_id, std::span<const double> z) const;
    /// Class with the highest mixture likelihood (equal priors).
    std::size_t most_likely_class(std::span<const double> z) const;
};

/// 2 classes x 2 components in 2-D, std 0.5 per axis.
GmmTask two_class_gmm();

LatentVec gen_class_gmm(const GmmTask& task, std::size_t class_id, Rng& rng);

/// x = A s + noise with s ~ N(0, diag(scales^2)); A is fixed by `seed`.
struct LinearGaussianTask {
    std::size_t d_input = 8;
    std::vector<double> scales = {3.0, 2.0};
    double noise_std = 0.05;
    std::uint64_t seed = 0;

    std::vector<double> mixing() const;  // [d_input x d_intrinsic]
    ad::Tensor sample(std::size_t n, Rng& rng) const;
};

/// [BOS, class_token, BOD, latents..., EOD, EOS]
MixedSequence build_interleaved(TokenId class_token, const std::vector<LatentVec>& latents);

/// Training corpus for the class-conditional task: n sequences with classes
/// drawn uniformly and `latents_per_block` latents each.
std::vector<MixedSequence> gmm_corpus(const GmmTask& task, const Vocabulary& vocab, std::size_t n,
                                      std::size_t latents_per_block, std::uint64_t seed);
/// [BOS, s_1 .. s_L, EOS] Markov sequences, each from its own seed stream.
std::vector<MixedSequence> markov_corpus(const MarkovGrammar& g, const Vocabulary& vocab, std::size_t n,
                                         std::size_t length, std::uint64_t seed);

/// Rounds every coordinate to the nearest 32-bit float.
LatentVec to_scalar_precision(LatentVec z);

}  // namespace latentlm::data

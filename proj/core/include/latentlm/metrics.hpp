#pragma once

#include <cstddef>
#include <vector>

#include "latentlm/model.hpp"
#include "latentlm/tasks.hpp"

namespace latentlm::metrics {

/// exp(mean NLL) over every discrete (non-PAD) target, teacher forced.
double perplexity(const LatentLM& model, const std::vector<MixedSequence>& data);
/// Mean diffusion loss over the continuous targets of `data`.
double diffusion_loss(const LatentLM& model, const std::vector<MixedSequence>& data, Rng& rng);

using Samples = std::vector<LatentVec>;

/// Median pairwise Euclidean distance of the pooled samples.
double median_bandwidth(const Samples& x, const Samples& y);
/// Biased MMD^2 with k(a, b) = exp(-|a - b|^2 / (2 bw^2)).
double mmd2(const Samples& x, const Samples& y, double bandwidth);

struct MmdTest {
    double statistic = 0.0;  // MMD^2(generated, reference half)
    double threshold = 0.0;  // quantile of MMD^2 between random reference halves
    double bandwidth = 0.0;
    bool passed = false;
};

/// `reference` needs at least twice as many samples as `generated`.
MmdTest mmd_test(const Samples& generated, const Samples& reference, Rng& rng, std::size_t n_splits = 200,
                 double quantile = 0.95);

/// 2 E|X - Y| - E|X - X'| - E|Y - Y'| (V-statistic).
double energy_distance(const Samples& x, const Samples& y);
/// Permutation p-value of the energy distance, (1 + #{perm >= obs}) / (1 + n).
double energy_permutation_pvalue(const Samples& x, const Samples& y, std::size_t n_permutations, Rng& rng);

/// Fraction of latents whose most likely mixture class is `class_id`.
double class_recovery(const data::GmmTask& task, const Samples& latents, std::size_t class_id);

/// Latents following [BOS, class, BOD] prompts, `n` per stream batch.
Samples generate_class_latents(const LatentLM& model, std::size_t class_id, std::size_t n,
                               const GenerateConfig& cfg, Rng& rng);

}  // namespace latentlm::metrics

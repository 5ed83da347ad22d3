#include "latentlm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "latentlm/errors.hpp"
#include "latentlm/ops.hpp"

namespace latentlm::metrics {

double perplexity(const LatentLM& model, const std::vector<MixedSequence>& data) {
    ad::NoGradScope no_grad;
    double nll = 0.0;
    std::size_t count = 0;
    for (const auto& seq : data) {
        std::vector<std::size_t> rows, targets;
        for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
            const auto* id = std::get_if<TokenId>(&seq[i + 1]);
            if (!id || *id == Vocabulary::PAD) continue;
            rows.push_back(i);
            targets.push_back(raw(*id));
        }
        if (rows.empty()) continue;
        auto h = model.hidden_states(seq);
        for (double v : ad::cross_entropy_values(model.logits(ad::gather_rows(h, rows)), targets)) nll += v;
        count += rows.size();
    }
    if (count == 0) throw ArgumentError("perplexity: dataset has no discrete targets");
    return std::exp(nll / static_cast<double>(count));
}

double diffusion_loss(const LatentLM& model, const std::vector<MixedSequence>& data, Rng& rng) {
    ad::NoGradScope no_grad;
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& seq : data) {
        bool any = false;
        for (const auto& e : seq) any = any || is_continuous(e);
        if (!any) continue;
        // parts.diff is a per-target mean; reweight to pool across sequences.
        auto parts = model.compute_loss(std::span(&seq, 1), rng);
        total += parts.diff * static_cast<double>(parts.continuous_targets);
        count += parts.continuous_targets;
    }
    if (count == 0) throw ArgumentError("diffusion_loss: dataset has no continuous targets");
    return total / static_cast<double>(count);
}

namespace {
double sq_dist(const LatentVec& a, const LatentVec& b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return s;
}

void check_samples(const Samples& x, const Samples& y, const char* op) {
    if (x.empty() || y.empty()) throw ArgumentError(std::string(op) + ": empty sample set");
    const auto d = x.front().size();
    for (const auto* s : {&x, &y})
        for (const auto& v : *s)
            if (v.size() != d) throw DimensionError(std::string(op) + ": samples differ in dimension");
}

double mean_kernel(const Samples& a, const Samples& b, double gamma) {
    double s = 0.0;
    for (const auto& u : a)
        for (const auto& v : b) s += std::exp(-gamma * sq_dist(u, v));
    return s / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

double mean_dist(const Samples& a, const Samples& b) {
    double s = 0.0;
    for (const auto& u : a)
        for (const auto& v : b) s += std::sqrt(sq_dist(u, v));
    return s / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

void shuffle(std::vector<std::size_t>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
}
}  // namespace

double median_bandwidth(const Samples& x, const Samples& y) {
    check_samples(x, y, "median_bandwidth");
    Samples pooled(x);
    pooled.insert(pooled.end(), y.begin(), y.end());
    std::vector<double> d;
    for (std::size_t i = 0; i < pooled.size(); ++i)
        for (std::size_t j = i + 1; j < pooled.size(); ++j) d.push_back(std::sqrt(sq_dist(pooled[i], pooled[j])));
    if (d.empty()) return 1.0;
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
    const double med = d[d.size() / 2];
    return med > 0.0 ? med : 1.0;
}

double mmd2(const Samples& x, const Samples& y, double bandwidth) {
    check_samples(x, y, "mmd2");
    if (!(bandwidth > 0.0)) throw ArgumentError("mmd2: bandwidth must be positive");
    const double gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    return mean_kernel(x, x, gamma) + mean_kernel(y, y, gamma) - 2.0 * mean_kernel(x, y, gamma);
}

MmdTest mmd_test(const Samples& generated, const Samples& reference, Rng& rng, std::size_t n_splits,
                 double quantile) {
    check_samples(generated, reference, "mmd_test");
    const std::size_t n = generated.size();
    if (reference.size() < 2 * n) throw ArgumentError("mmd_test: reference needs twice the generated sample count");
    MmdTest t;
    t.bandwidth = median_bandwidth(reference, generated);
    std::vector<std::size_t> idx(reference.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto half = [&](std::size_t from) {
        Samples s;
        for (std::size_t i = from; i < from + n; ++i) s.push_back(reference[idx[i]]);
        return s;
    };
    std::vector<double> null;
    for (std::size_t k = 0; k < n_splits; ++k) {
        shuffle(idx, rng);
        null.push_back(mmd2(half(0), half(n), t.bandwidth));
    }
    std::sort(null.begin(), null.end());
    t.threshold = null[std::min(null.size() - 1, static_cast<std::size_t>(quantile * static_cast<double>(null.size())))];
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    t.statistic = mmd2(generated, half(0), t.bandwidth);
    t.passed = t.statistic <= t.threshold;
    return t;
}

double energy_distance(const Samples& x, const Samples& y) {
    check_samples(x, y, "energy_distance");
    return 2.0 * mean_dist(x, y) - mean_dist(x, x) - mean_dist(y, y);
}

double energy_permutation_pvalue(const Samples& x, const Samples& y, std::size_t n_permutations, Rng& rng) {
    const double observed = energy_distance(x, y);
    Samples pooled(x);
    pooled.insert(pooled.end(), y.begin(), y.end());
    std::vector<std::size_t> idx(pooled.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::size_t exceed = 0;
    for (std::size_t k = 0; k < n_permutations; ++k) {
        shuffle(idx, rng);
        Samples a, b;
        for (std::size_t i = 0; i < idx.size(); ++i) (i < x.size() ? a : b).push_back(pooled[idx[i]]);
        if (energy_distance(a, b) >= observed) ++exceed;
    }
    return static_cast<double>(1 + exceed) / static_cast<double>(1 + n_permutations);
}

double class_recovery(const data::GmmTask& task, const Samples& latents, std::size_t class_id) {
    if (latents.empty()) throw ArgumentError("class_recovery: no latents");
    if (class_id >= task.n_classes()) throw IndexError("class_recovery: class out of range");
    std::size_t hits = 0;
    for (const auto& z : latents) hits += task.most_likely_class(z) == class_id ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(latents.size());
}

Samples generate_class_latents(const LatentLM& model, std::size_t class_id, std::size_t n, const GenerateConfig& cfg,
                               Rng& rng) {
    const MixedSequence prompt{Vocabulary::BOS, model.vocab().class_token(class_id), Vocabulary::BOD};
    std::vector<MixedSequence> prompts(n, prompt);
    auto gen = cfg;
    gen.max_new = 1;
    Samples out;
    for (auto& seq : model.generate_batch(prompts, gen, rng)) {
        out.push_back(std::get<LatentVec>(seq.front()));
    }
    return out;
}

}  // namespace latentlm::metrics

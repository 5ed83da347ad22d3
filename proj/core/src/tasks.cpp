#include "latentlm/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>

#include "latentlm/errors.hpp"

namespace latentlm::data {

void MarkovGrammar::validate() const {
    if (n_states == 0) throw ArgumentError("grammar: no states");
    if (transition.size() != n_states * n_states) throw ArgumentError("grammar: transition is not n x n");
    if (start.size() != n_states) throw ArgumentError("grammar: start distribution has wrong length");
    auto check_row = [](std::span<const double> row, const std::string& what) {
        double s = 0.0;
        for (double v : row) {
            if (!(v >= 0.0)) throw ArgumentError("grammar: negative entry in " + what);
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-9) throw ArgumentError("grammar: " + what + " sums to " + std::to_string(s));
    };
    for (std::size_t i = 0; i < n_states; ++i) {
        check_row(std::span(transition).subspan(i * n_states, n_states), "row " + std::to_string(i));
    }
    check_row(start, "start distribution");
}

MarkovGrammar three_state_grammar() {
    return {3, {0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 0.25, 0.25, 0.5}, {1.0 / 3, 1.0 / 3, 1.0 / 3}};
}

namespace {
std::size_t draw_categorical(std::span<const double> p, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) return i;
    }
    for (std::size_t i = p.size(); i-- > 0;)
        if (p[i] > 0.0) return i;
    return 0;
}
}  // namespace

std::vector<std::size_t> gen_markov_states(const MarkovGrammar& g, std::size_t length, std::uint64_t seed) {
    g.validate();
    if (length < 1) throw ArgumentError("gen_markov_text: length must be at least 1");
    Rng rng(seed);
    std::vector<std::size_t> out(length);
    out[0] = draw_categorical(g.start, rng);
    for (std::size_t i = 1; i < length; ++i) {
        out[i] = draw_categorical(std::span(g.transition).subspan(out[i - 1] * g.n_states, g.n_states), rng);
    }
    return out;
}

std::vector<TokenId> gen_markov_text(const MarkovGrammar& g, std::size_t length, std::uint64_t seed,
                                     const Vocabulary& vocab) {
    if (vocab.n_text() < g.n_states) throw VocabularyError("gen_markov_text: vocabulary has too few text tokens");
    std::vector<TokenId> out;
    for (auto s : gen_markov_states(g, length, seed)) out.push_back(vocab.text_token(s));
    return out;
}

std::vector<double> stationary_distribution(const MarkovGrammar& g) {
    g.validate();
    const std::size_t n = g.n_states;
    // Irreducible iff every state reaches every other.
    for (std::size_t src = 0; src < n; ++src) {
        std::vector<bool> seen(n, false);
        std::deque<std::size_t> queue{src};
        seen[src] = true;
        while (!queue.empty()) {
            const auto i = queue.front();
            queue.pop_front();
            for (std::size_t j = 0; j < n; ++j) {
                if (g.p(i, j) > 0.0 && !seen[j]) {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        for (std::size_t j = 0; j < n; ++j) {
            if (!seen[j]) {
                throw ArgumentError("grammar is reducible: state " + std::to_string(j) + " unreachable from state " +
                                    std::to_string(src));
            }
        }
    }
    std::vector<double> pi(n, 1.0 / static_cast<double>(n)), next(n);
    for (int iter = 0; iter < 1000000; ++iter) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.5 * pi[j];
            for (std::size_t i = 0; i < n; ++i) s += 0.5 * pi[i] * g.p(i, j);
            next[j] = s;
        }
        double delta = 0.0;
        for (std::size_t j = 0; j < n; ++j) delta = std::max(delta, std::abs(next[j] - pi[j]));
        pi.swap(next);
        if (delta < 1e-12) break;
    }
    return pi;
}

double grammar_entropy_rate(const MarkovGrammar& g) {
    const auto pi = stationary_distribution(g);
    double h = 0.0;
    for (std::size_t i = 0; i < g.n_states; ++i) {
        for (std::size_t j = 0; j < g.n_states; ++j) {
            const double p = g.p(i, j);
            if (p > 0.0) h -= pi[i] * p * std::log(p);
        }
    }
    return h;
}

void GmmTask::validate() const {
    if (classes.empty()) throw ArgumentError("gmm: no classes");
    for (std::size_t c = 0; c < classes.size(); ++c) {
        if (classes[c].empty()) throw ArgumentError("gmm: class " + std::to_string(c) + " has no components");
        double w = 0.0;
        for (const auto& comp : classes[c]) {
            if (comp.mean.size() != d_latent || comp.var.size() != d_latent) {
                throw DimensionError("gmm: component dimension differs from d_latent");
            }
            for (double v : comp.var)
                if (!(v >= 0.0)) throw ArgumentError("gmm: negative variance");
            w += comp.weight;
        }
        if (std::abs(w - 1.0) > 1e-9) throw ArgumentError("gmm: class " + std::to_string(c) + " weights sum to " +
                                                          std::to_string(w));
    }
}

double GmmTask::log_density(std::size_t class_id, std::span<const double> z) const {
    if (class_id >= classes.size()) throw IndexError("gmm: class " + std::to_string(class_id) + " out of range");
    if (z.size() != d_latent) throw DimensionError("gmm: latent length differs from d_latent");
    std::vector<double> terms;
    for (const auto& comp : classes[class_id]) {
        double lp = std::log(comp.weight);
        for (std::size_t j = 0; j < d_latent; ++j) {
            const double d = z[j] - comp.mean[j];
            lp -= 0.5 * (std::log(2.0 * std::numbers::pi * comp.var[j]) + d * d / comp.var[j]);
        }
        terms.push_back(lp);
    }
    const double mx = *std::max_element(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += std::exp(t - mx);
    return mx + std::log(s);
}

std::size_t GmmTask::most_likely_class(std::span<const double> z) const {
    std::size_t best = 0;
    double best_lp = -INFINITY;
    for (std::size_t c = 0; c < classes.size(); ++c) {
        const double lp = log_density(c, z);
        if (lp > best_lp) {
            best_lp = lp;
            best = c;
        }
    }
    return best;
}

GmmTask two_class_gmm() {
    const std::vector<double> var = {0.25, 0.25};
    GmmTask t;
    t.d_latent = 2;
    t.classes = {
        {{{-1.5, -1.5}, var, 0.5}, {{-1.5, 1.5}, var, 0.5}},
        {{{1.5, -1.5}, var, 0.3}, {{1.5, 1.5}, var, 0.7}},
    };
    return t;
}

LatentVec to_scalar_precision(LatentVec z) {
    for (auto& v : z) v = static_cast<double>(static_cast<float>(v));
    return z;
}

LatentVec gen_class_gmm(const GmmTask& task, std::size_t class_id, Rng& rng) {
    if (class_id >= task.n_classes()) throw IndexError("gmm: class " + std::to_string(class_id) + " out of range");
    const auto& comps = task.classes[class_id];
    std::vector<double> w;
    for (const auto& c : comps) w.push_back(c.weight);
    const auto& comp = comps[draw_categorical(w, rng)];
    LatentVec z(task.d_latent);
    for (std::size_t j = 0; j < task.d_latent; ++j) {
        const double e = rng.normal();
        z[j] = comp.mean[j] + (comp.var[j] > 0.0 ? std::sqrt(comp.var[j]) * e : 0.0);
    }
    return to_scalar_precision(std::move(z));
}

std::vector<double> LinearGaussianTask::mixing() const {
    Rng rng(seed);
    const std::size_t k = scales.size();
    std::vector<double> a(d_input * k);
    for (auto& v : a) v = rng.normal();
    // Orthonormal columns (Gram-Schmidt), so scales are the principal stds.
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t p = 0; p < c; ++p) {
            double dot = 0.0;
            for (std::size_t r = 0; r < d_input; ++r) dot += a[r * k + c] * a[r * k + p];
            for (std::size_t r = 0; r < d_input; ++r) a[r * k + c] -= dot * a[r * k + p];
        }
        double norm = 0.0;
        for (std::size_t r = 0; r < d_input; ++r) norm += a[r * k + c] * a[r * k + c];
        norm = std::sqrt(norm);
        for (std::size_t r = 0; r < d_input; ++r) a[r * k + c] /= norm;
    }
    return a;
}

ad::Tensor LinearGaussianTask::sample(std::size_t n, Rng& rng) const {
    if (scales.empty() || scales.size() > d_input) throw ArgumentError("linear-gaussian: bad intrinsic dimension");
    const auto a = mixing();
    const std::size_t k = scales.size();
    std::vector<double> x(n * d_input), s(k);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < k; ++c) s[c] = scales[c] * rng.normal();
        for (std::size_t r = 0; r < d_input; ++r) {
            double v = noise_std * rng.normal();
            for (std::size_t c = 0; c < k; ++c) v += a[r * k + c] * s[c];
            x[i * d_input + r] = static_cast<double>(static_cast<float>(v));
        }
    }
    return ad::Tensor::from_data({n, d_input}, std::move(x));
}

MixedSequence build_interleaved(TokenId class_token, const std::vector<LatentVec>& latents) {
    if (latents.empty()) throw ArgumentError("build_interleaved: no latents");
    MixedSequence seq{Vocabulary::BOS, class_token, Vocabulary::BOD};
    for (const auto& z : latents) seq.emplace_back(z);
    seq.emplace_back(Vocabulary::EOD);
    seq.emplace_back(Vocabulary::EOS);
    return seq;
}

std::vector<MixedSequence> gmm_corpus(const GmmTask& task, const Vocabulary& vocab, std::size_t n,
                                      std::size_t latents_per_block, std::uint64_t seed) {
    task.validate();
    std::vector<MixedSequence> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto rng = Rng::stream(seed, i);
        const std::size_t c = rng.uniform_index(task.n_classes());
        std::vector<LatentVec> zs;
        for (std::size_t k = 0; k < latents_per_block; ++k) zs.push_back(gen_class_gmm(task, c, rng));
        out.push_back(build_interleaved(vocab.class_token(c), zs));
    }
    return out;
}

std::vector<MixedSequence> markov_corpus(const MarkovGrammar& g, const Vocabulary& vocab, std::size_t n,
                                         std::size_t length, std::uint64_t seed) {
    std::vector<MixedSequence> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        MixedSequence seq{Vocabulary::BOS};
        for (auto t : gen_markov_text(g, length, Rng::stream(seed, i).next_u64(), vocab)) seq.emplace_back(t);
        seq.emplace_back(Vocabulary::EOS);
        out.push_back(std::move(seq));
    }
    return out;
}

}  // namespace latentlm::data

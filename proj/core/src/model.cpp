#include "latentlm/model.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "latentlm/errors.hpp"
#include "latentlm/ops.hpp"

namespace latentlm {

void ModelConfig::validate() const {
    backbone.validate();
    auto h = head;
    h.d_cond = backbone.d_model;
    h.validate();
    if (diffusion_steps < 1) throw ConfigError("model: diffusion_steps must be at least 1");
    if (alpha < 0.0) throw ConfigError("model: alpha must be non-negative");
    if (n_diffusion_timesteps < 1) throw ConfigError("model: n_diffusion_timesteps must be at least 1");
    if (latents_per_block < 1) throw ConfigError("model: latents_per_block must be at least 1");
}

std::string to_string(DiscreteMethod method) {
    switch (method) {
        case DiscreteMethod::greedy: return "greedy";
        case DiscreteMethod::top_p: return "top_p";
        case DiscreteMethod::temperature: return "temperature";
    }
    return "?";
}

DiscreteMethod parse_discrete_method(const std::string& text) {
    if (text == "greedy") return DiscreteMethod::greedy;
    if (text == "top_p") return DiscreteMethod::top_p;
    if (text == "temperature") return DiscreteMethod::temperature;
    throw ConfigError("unknown discrete sampler '" + text + "' (expected greedy|top_p|temperature)");
}

namespace {

std::size_t draw(std::span<const double> weights, std::span<const std::size_t> order, double mass, Rng& rng) {
    const double u = rng.uniform() * mass;
    double acc = 0.0;
    for (auto i : order) {
        acc += weights[i];
        if (u < acc) return i;
    }
    // Rounding left u just past the last bucket.
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if (weights[*it] > 0.0) return *it;
    return order.front();
}

}  // namespace

TokenId sample_discrete(std::span<const double> probs, const DiscreteSampler& sampler, Rng& rng) {
    if (probs.empty()) throw ArgumentError("sample_discrete: empty distribution");
    double total = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) throw ArgumentError("sample_discrete: negative or NaN probability");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-5) throw ArgumentError("sample_discrete: probabilities sum to " +
                                                          std::to_string(total));
    const auto as_token = [](std::size_t i) { return token(static_cast<std::uint32_t>(i)); };
    std::vector<std::size_t> order(probs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    switch (sampler.method) {
        case DiscreteMethod::greedy:
            return as_token(static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin()));
        case DiscreteMethod::top_p: {
            const double p = sampler.top_p;
            if (!(p > 0.0 && p <= 1.0)) throw ArgumentError("sample_discrete: top_p must lie in (0, 1]");
            std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return probs[a] > probs[b]; });
            double mass = 0.0;
            std::size_t keep = 0;
            while (keep < order.size()) {
                mass += probs[order[keep++]];
                if (mass >= p) break;
            }
            if (p >= 1.0) {
                keep = order.size();
                mass = total;
            }
            return as_token(draw(probs, std::span(order).first(keep), mass, rng));
        }
        case DiscreteMethod::temperature: {
            const double tau = sampler.temperature;
            if (!(tau > 0.0)) throw ArgumentError("sample_discrete: temperature must be positive");
            std::vector<double> w(probs.size());
            double mass = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) {
                w[i] = probs[i] > 0.0 ? std::pow(probs[i], 1.0 / tau) : 0.0;
                mass += w[i];
            }
            return as_token(draw(w, order, mass, rng));
        }
    }
    throw ArgumentError("sample_discrete: unknown method");
}

LatentLM::LatentLM(const ModelConfig& cfg, Rng& rng) : cfg_(cfg), vocab_(cfg.vocab()) {
    cfg_.head.d_cond = cfg_.backbone.d_model;
    cfg_.validate();
    const std::size_t d = cfg_.backbone.d_model, V = vocab_.size();
    embedding_ = nn::normal_param({V, d}, nn::kInitStd, rng);
    latent_proj_ = nn::Linear(cfg_.d_latent(), d, false, rng, nn::kInitStd);
    backbone_ = nn::Transformer(cfg_.backbone, rng);
    lm_head_ = nn::normal_param({d, V}, nn::kInitStd, rng);
    head_ = diffusion::DiffusionHead(cfg_.head, rng);
    schedule_ = diffusion::NoiseSchedule::build(cfg_.schedule, cfg_.diffusion_steps);
}

void LatentLM::collect(ParamList& out) const {
    out.push_back({"embedding", embedding_, true});
    latent_proj_.collect(out, "latent_proj");
    backbone_.collect(out, "backbone");
    out.push_back({"lm_head", lm_head_, true});
    head_.collect(out, "head");
}

ad::Tensor LatentLM::embed_elements(std::span<const SequenceElement> elements) const {
    const std::size_t n = elements.size(), dl = cfg_.d_latent();
    std::vector<std::size_t> ids, order(n);
    std::vector<double> latents;
    std::size_t n_disc = 0;
    for (const auto& e : elements) n_disc += is_discrete(e) ? 1 : 0;
    std::size_t di = 0, ci = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (const auto* id = std::get_if<TokenId>(&elements[i])) {
            if (!vocab_.contains(*id)) {
                throw VocabularyError("unknown token id " + std::to_string(raw(*id)) + " (vocabulary size " +
                                      std::to_string(vocab_.size()) + ")");
            }
            ids.push_back(raw(*id));
            order[i] = di++;
        } else {
            const auto& z = std::get<LatentVec>(elements[i]);
            if (z.size() != dl) throw DimensionError("latent of length " + std::to_string(z.size()) +
                                                     ", expected " + std::to_string(dl));
            latents.insert(latents.end(), z.begin(), z.end());
            order[i] = n_disc + ci++;
        }
    }
    if (ci == 0) return ad::gather_rows(embedding_, ids);
    auto cont = latent_proj_(ad::Tensor::from_data({ci, dl}, std::move(latents)));
    if (di == 0) return cont;
    const ad::Tensor parts[2] = {ad::gather_rows(embedding_, ids), cont};
    return ad::gather_rows(ad::concat_rows(parts), order);
}

ad::Tensor LatentLM::embed_sequence(const MixedSequence& seq) const {
    validate_sequence(seq, vocab_, cfg_.d_latent(), cfg_.backbone.max_seq_len, true);
    if (seq.empty()) return ad::Tensor::zeros({0, cfg_.backbone.d_model});
    return embed_elements(seq);
}

ad::Tensor LatentLM::hidden_states(const MixedSequence& seq) const { return backbone_.forward(embed_sequence(seq)); }

ad::Tensor LatentLM::logits(const ad::Tensor& h) const { return ad::matmul(h, lm_head_); }

std::vector<double> LatentLM::discrete_probs(std::span<const double> h_row, double temperature) const {
    ad::NoGradScope no_grad;
    const std::size_t d = cfg_.backbone.d_model, V = vocab_.size();
    if (h_row.size() != d) throw DimensionError("discrete_probs: state is not of length d_model");
    auto lg = logits(ad::Tensor::from_data({1, d}, std::vector<double>(h_row.begin(), h_row.end())));
    std::vector<double> z(lg.data().begin(), lg.data().end());
    std::vector<bool> allowed(V, true);
    for (auto m : {Vocabulary::PAD, Vocabulary::BOS, Vocabulary::EOD, Vocabulary::UNCOND}) allowed[raw(m)] = false;
    double mx = -INFINITY;
    for (std::size_t i = 0; i < V; ++i)
        if (allowed[i]) mx = std::max(mx, z[i] / temperature);
    std::vector<double> p(V, 0.0);
    double s = 0.0;
    for (std::size_t i = 0; i < V; ++i) {
        if (!allowed[i]) continue;
        p[i] = std::exp(z[i] / temperature - mx);
        s += p[i];
    }
    for (auto& v : p) v /= s;
    return p;
}

LossParts LatentLM::compute_loss(std::span<const MixedSequence> batch, Rng& rng) const {
    std::vector<std::size_t> seg_rows, lm_rows, lm_targets, diff_rows;
    std::vector<double> x0;
    std::vector<ad::Tensor> embeds;
    std::size_t offset = 0;
    for (const auto& seq : batch) {
        validate_sequence(seq, vocab_, cfg_.d_latent(), cfg_.backbone.max_seq_len);
        if (seq.empty()) continue;
        embeds.push_back(embed_elements(seq));
        seg_rows.push_back(seq.size());
        for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
            const auto& next = seq[i + 1];
            if (const auto* id = std::get_if<TokenId>(&next)) {
                if (*id == Vocabulary::PAD) continue;
                lm_rows.push_back(offset + i);
                lm_targets.push_back(raw(*id));
            } else {
                const auto& z = std::get<LatentVec>(next);
                diff_rows.push_back(offset + i);
                x0.insert(x0.end(), z.begin(), z.end());
            }
        }
        offset += seq.size();
    }
    if (lm_rows.empty() && diff_rows.empty()) throw ArgumentError("compute_loss: batch has no target positions");

    auto H = backbone_.forward(ad::concat_rows(embeds), seg_rows);
    LossParts out;
    out.discrete_targets = lm_rows.size();
    out.continuous_targets = diff_rows.size();
    ad::Tensor lm, diff;
    if (!lm_rows.empty()) {
        lm = ad::softmax_cross_entropy(logits(ad::gather_rows(H, lm_rows)), lm_targets);
        out.lm = lm.item();
    }
    if (!diff_rows.empty()) {
        const std::size_t m = diff_rows.size();
        diff = diffusion::diffusion_loss(head_, schedule_, ad::Tensor::from_data({m, cfg_.d_latent()}, std::move(x0)),
                                         ad::gather_rows(H, diff_rows), rng, cfg_.n_diffusion_timesteps);
        out.diff = diff.item();
    }
    if (diff.defined() && cfg_.alpha != 0.0) {
        auto weighted = cfg_.alpha == 1.0 ? diff : ad::scale(diff, cfg_.alpha);
        out.total = lm.defined() ? ad::add(lm, weighted) : weighted;
    } else {
        out.total = lm.defined() ? lm : ad::Tensor::scalar(0.0);
    }
    return out;
}

SequenceElement LatentLM::decode_step(const ad::Tensor& h, bool continuous, const GenerateConfig& cfg, Rng& rng,
                                      const ad::Tensor& h_uncond) const {
    ad::NoGradScope no_grad;
    if (continuous) {
        auto z = diffusion::sample_latents(head_, schedule_, cfg.continuous, h, h_uncond, rng);
        return LatentVec(z.data().begin(), z.data().end());
    }
    const double tau = cfg.discrete.method == DiscreteMethod::temperature ? cfg.discrete.temperature : 1.0;
    if (!(tau > 0.0)) throw ArgumentError("decode_step: temperature must be positive");
    return sample_discrete(discrete_probs(h.data(), tau), cfg.discrete, rng);
}

namespace {

struct Stream {
    MixedSequence context;
    MixedSequence uncond;
    MixedSequence out;
    std::size_t fed = 0;
    bool open = false;
    std::size_t block_len = 0;
    bool done = false;
    std::unique_ptr<nn::KVCache> cache, ucache;
};

void track_block(Stream& s, const SequenceElement& e) {
    if (const auto* id = std::get_if<TokenId>(&e)) {
        if (*id == Vocabulary::BOD) {
            s.open = true;
            s.block_len = 0;
        } else if (*id == Vocabulary::EOD) {
            s.open = false;
        }
    } else {
        ++s.block_len;
    }
}

}  // namespace

MixedSequence LatentLM::generate(const MixedSequence& prompt, const GenerateConfig& cfg, Rng& rng,
                                 GenerationTrace* trace) const {
    return generate_batch(std::span(&prompt, 1), cfg, rng, trace).front();
}

std::vector<MixedSequence> LatentLM::generate_batch(std::span<const MixedSequence> prompts,
                                                    const GenerateConfig& cfg, Rng& rng,
                                                    GenerationTrace* trace) const {
    if (cfg.max_new < 1) throw ArgumentError("generate: max_new must be at least 1");
    cfg.continuous.validate(schedule_, cfg_.head.objective);
    ad::NoGradScope no_grad;
    const bool guided = cfg.continuous.cfg_scale != 1.0 && vocab_.n_classes() > 0;
    const std::size_t d = cfg_.backbone.d_model, k = cfg_.latents_per_block;

    std::vector<Stream> streams(prompts.size());
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        auto& s = streams[i];
        validate_sequence(prompts[i], vocab_, cfg_.d_latent(), cfg_.backbone.max_seq_len, true);
        s.context = prompts[i];
        if (s.context.empty()) s.context.emplace_back(Vocabulary::BOS);
        for (const auto& e : s.context) track_block(s, e);
        if (guided) {
            s.uncond = s.context;
            for (auto& e : s.uncond) {
                if (const auto* id = std::get_if<TokenId>(&e); id && vocab_.is_class(*id)) e = Vocabulary::UNCOND;
            }
        }
        if (cfg.use_cache) {
            s.cache = std::make_unique<nn::KVCache>(cfg_.backbone);
            if (guided) s.ucache = std::make_unique<nn::KVCache>(cfg_.backbone);
        }
    }

    for (std::size_t step = 0; step < cfg.max_new; ++step) {
        std::vector<std::size_t> active;
        for (std::size_t i = 0; i < streams.size(); ++i)
            if (!streams[i].done) active.push_back(i);
        if (active.empty()) break;

        // Segments: conditional streams, then their unconditional twins.
        std::vector<ad::Tensor> parts;
        std::vector<std::size_t> seg_rows;
        std::vector<nn::KVCache*> caches;
        auto add_segment = [&](const MixedSequence& seq, nn::KVCache* cache) {
            const std::size_t from = cfg.use_cache ? cache->filled() : 0;
            auto span = std::span(seq).subspan(from);
            parts.push_back(embed_elements(span));
            seg_rows.push_back(span.size());
            if (cfg.use_cache) caches.push_back(cache);
        };
        for (auto i : active) add_segment(streams[i].context, streams[i].cache.get());
        if (guided) {
            for (auto i : active) add_segment(streams[i].uncond, streams[i].ucache.get());
        }
        auto H = backbone_.forward(ad::concat_rows(parts), seg_rows, caches);

        std::vector<std::size_t> last(seg_rows.size());
        std::size_t row = 0;
        for (std::size_t sgm = 0; sgm < seg_rows.size(); ++sgm) {
            row += seg_rows[sgm];
            last[sgm] = row - 1;
        }
        auto hv = H.data();
        auto state = [&](std::size_t sgm) { return hv.subspan(last[sgm] * d, d); };

        std::vector<SequenceElement> produced(active.size());
        std::vector<std::size_t> cont;
        for (std::size_t a = 0; a < active.size(); ++a) {
            const auto& s = streams[active[a]];
            if (s.open && s.block_len >= k) {
                produced[a] = Vocabulary::EOD;
            } else if (s.open) {
                cont.push_back(a);
            } else {
                const double tau =
                    cfg.discrete.method == DiscreteMethod::temperature ? cfg.discrete.temperature : 1.0;
                produced[a] = sample_discrete(discrete_probs(state(a), tau), cfg.discrete, rng);
            }
        }
        if (!cont.empty()) {
            std::vector<std::size_t> crow, urow;
            for (auto a : cont) {
                crow.push_back(last[a]);
                urow.push_back(last[active.size() + a]);
            }
            auto z = diffusion::sample_latents(head_, schedule_, cfg.continuous, ad::gather_rows(H, crow),
                                               guided ? ad::gather_rows(H, urow) : ad::Tensor{}, rng);
            const std::size_t dl = cfg_.d_latent();
            for (std::size_t c = 0; c < cont.size(); ++c) {
                auto zr = z.data().subspan(c * dl, dl);
                produced[cont[c]] = LatentVec(zr.begin(), zr.end());
            }
        }

        for (std::size_t a = 0; a < active.size(); ++a) {
            auto& s = streams[active[a]];
            if (trace && active[a] == 0) {
                auto st = state(a);
                trace->states.emplace_back(st.begin(), st.end());
            }
            track_block(s, produced[a]);
            s.context.push_back(produced[a]);
            if (guided) s.uncond.push_back(produced[a]);
            s.out.push_back(std::move(produced[a]));
            if (const auto* id = std::get_if<TokenId>(&s.out.back()); id && *id == Vocabulary::EOS) s.done = true;
        }
    }

    std::vector<MixedSequence> result;
    result.reserve(streams.size());
    for (auto& s : streams) {
        if (s.open) s.out.emplace_back(Vocabulary::EOD);
        result.push_back(std::move(s.out));
    }
    return result;
}

}  // namespace latentlm

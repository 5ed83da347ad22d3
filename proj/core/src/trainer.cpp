#include "latentlm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "latentlm/errors.hpp"
#include "latentlm/shard.hpp"
#include "latentlm/tasks.hpp"

namespace latentlm {

double lr_at(std::size_t step, double lr_max, double lr_min, std::size_t warmup, std::size_t total) {
    if (warmup > 0 && step < warmup) return lr_max * static_cast<double>(step) / static_cast<double>(warmup);
    if (step >= total || total <= warmup) return step >= total && total > warmup ? lr_min : lr_max;
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    return lr_min + (lr_max - lr_min) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double lr_at(std::size_t step, const RunConfig& cfg) {
    return lr_at(step, cfg.optim.lr, cfg.train.lr_min, cfg.train.warmup_steps, cfg.train.total_steps);
}

std::string format_metrics_row(const MetricsRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.6g", r.step, r.lm_loss, r.diff_loss, r.total_loss, r.lr,
                  r.tokens_per_sec);
    return buf;
}

Datasets build_datasets(const RunConfig& cfg) {
    const auto vocab = cfg.model.vocab();
    const auto seed = cfg.train.seed;
    Datasets d;
    switch (cfg.data.task) {
        case TaskKind::markov: {
            const auto g = data::three_state_grammar();
            d.train = data::markov_corpus(g, vocab, cfg.data.n_train, cfg.data.length, seed * 2 + 1);
            d.eval = data::markov_corpus(g, vocab, cfg.data.n_eval, cfg.data.length, seed * 2 + 2);
            break;
        }
        case TaskKind::gmm: {
            const auto task = data::two_class_gmm();
            const auto k = cfg.model.latents_per_block;
            d.train = data::gmm_corpus(task, vocab, cfg.data.n_train, k, seed * 2 + 1);
            d.eval = data::gmm_corpus(task, vocab, cfg.data.n_eval, k, seed * 2 + 2);
            break;
        }
        case TaskKind::shard:
            d.train = data::read_shard(cfg.data.shard);
            if (!cfg.data.eval_shard.empty()) d.eval = data::read_shard(cfg.data.eval_shard);
            break;
    }
    return d;
}

Trainer::Trainer(const RunConfig& cfg) : cfg_(cfg), rng_(Rng::stream(cfg.train.seed, 1)) {
    cfg_.validate();
    auto init = Rng::stream(cfg_.train.seed, 0);
    model_ = std::make_unique<LatentLM>(cfg_.model, init);
    model_->collect(params_);
    opt_ = std::make_unique<AdamW>(params_, cfg_.optim);
}

Trainer Trainer::from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.kind != "latentlm") throw FormatError("checkpoint kind '" + ckpt.kind + "' is not a latentlm model");
    Trainer t(run_config_from(ConfigFile::parse(ckpt.config_text, "<checkpoint config>")));
    restore(t.params_, ckpt.tensors);
    if (ckpt.optimizer) t.opt_->restore(ckpt.optimizer->moments, ckpt.optimizer->step);
    if (!ckpt.rng_state.empty()) t.rng_ = Rng::deserialize(ckpt.rng_state);
    t.step_ = ckpt.step;
    return t;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint c;
    c.kind = "latentlm";
    c.config_text = to_text(cfg_);
    c.tensors = snapshot(params_);
    c.optimizer = OptimizerRecord{opt_->step_count(), opt_->moments()};
    c.rng_state = rng_.serialize();
    c.step = step_;
    return c;
}

MetricsRow Trainer::step(const std::vector<MixedSequence>& data) {
    if (data.empty()) throw ArgumentError("train: empty dataset");
    const auto& vocab = model_->vocab();
    std::vector<MixedSequence> batch;
    batch.reserve(cfg_.train.batch_size);
    std::size_t tokens = 0;
    for (std::size_t b = 0; b < cfg_.train.batch_size; ++b) {
        auto seq = data[rng_.uniform_index(data.size())];
        // Classifier-free guidance dropout: the class token becomes UNCOND.
        const bool drop = rng_.uniform() < cfg_.train.cfg_drop_prob;
        if (drop) {
            for (auto& e : seq) {
                if (const auto* id = std::get_if<TokenId>(&e); id && vocab.is_class(*id)) e = Vocabulary::UNCOND;
            }
        }
        tokens += seq.size();
        batch.push_back(std::move(seq));
    }

    const auto t0 = std::chrono::steady_clock::now();
    opt_->zero_grad();
    auto parts = model_->compute_loss(batch, rng_);
    const double total = parts.total.item();
    if (!std::isfinite(total)) {
        throw NumericError("non-finite loss at step " + std::to_string(step_ + 1));
    }
    ad::backward(parts.total);
    if (cfg_.train.grad_clip > 0.0) {
        const double norm = clip_grad_norm(params_, cfg_.train.grad_clip);
        if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm at step " + std::to_string(step_ + 1));
    }
    const double lr = lr_at(step_ + 1, cfg_);
    opt_->step(lr);
    ++step_;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {step_, parts.lm, parts.diff, total, lr, secs > 0.0 ? static_cast<double>(tokens) / secs : 0.0};
}

TrainResult Trainer::run(const std::vector<MixedSequence>& data, std::size_t steps,
                         const std::function<void(const MetricsRow&)>& on_log, const std::string& checkpoint_path) {
    TrainResult result;
    for (std::size_t i = 0; i < steps; ++i) {
        MetricsRow row;
        try {
            row = step(data);
        } catch (const NumericError& e) {
            result.halted = true;
            result.message = e.what();
            return result;
        }
        ++result.steps_done;
        if (on_log && step_ % cfg_.train.log_every == 0) on_log(row);
        if (!checkpoint_path.empty() && step_ % cfg_.train.checkpoint_every == 0) {
            save_checkpoint(checkpoint_path, checkpoint());
        }
    }
    return result;
}

LatentLM load_model(const Checkpoint& ckpt, RunConfig* cfg_out) {
    if (ckpt.kind != "latentlm") throw FormatError("checkpoint kind '" + ckpt.kind + "' is not a latentlm model");
    auto cfg = run_config_from(ConfigFile::parse(ckpt.config_text, "<checkpoint config>"));
    Rng init(0);
    LatentLM model(cfg.model, init);
    ParamList params;
    model.collect(params);
    restore(params, ckpt.tensors);
    if (cfg_out) *cfg_out = cfg;
    return model;
}

}  // namespace latentlm

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "latentlm/checkpoint.hpp"
#include "latentlm/config.hpp"
#include "latentlm/model.hpp"

namespace latentlm {

/// Linear warmup 0 -> lr_max over `warmup` steps, then cosine decay to lr_min
/// at `total`. Steps past `total` hold lr_min.
double lr_at(std::size_t step, double lr_max, double lr_min, std::size_t warmup, std::size_t total);
double lr_at(std::size_t step, const RunConfig& cfg);

struct MetricsRow {
    std::size_t step = 0;
    double lm_loss = 0.0;
    double diff_loss = 0.0;
    double total_loss = 0.0;
    double lr = 0.0;
    double tokens_per_sec = 0.0;
};

inline constexpr const char* kMetricsHeader = "step,lm_loss,diff_loss,total_loss,lr,tokens_per_sec";
std::string format_metrics_row(const MetricsRow& row);

struct TrainResult {
    std::size_t steps_done = 0;
    bool halted = false;  // non-finite loss or gradient
    std::string message;
};

struct Datasets {
    std::vector<MixedSequence> train;
    std::vector<MixedSequence> eval;
};

/// Synthesizes (or loads) the corpora named in cfg.data.
Datasets build_datasets(const RunConfig& cfg);

class Trainer {
public:
    /// Fresh model initialised from cfg.train.seed.
    explicit Trainer(const RunConfig& cfg);
    static Trainer from_checkpoint(const Checkpoint& ckpt);

    /// One optimizer update on a batch drawn from `data`. Throws NumericError
    /// (leaving parameters untouched) when the loss or a gradient is not finite.
    MetricsRow step(const std::vector<MixedSequence>& data);

    /// Runs `steps` updates. `on_log` sees every log_every-th row; a
    /// checkpoint is written to `checkpoint_path` every checkpoint_every steps
    /// when the path is non-empty. A non-finite loss stops the run with the
    /// parameters of the last good step.
    TrainResult run(const std::vector<MixedSequence>& data, std::size_t steps,
                    const std::function<void(const MetricsRow&)>& on_log = {},
                    const std::string& checkpoint_path = "");

    Checkpoint checkpoint() const;

    const RunConfig& config() const { return cfg_; }
    LatentLM& model() { return *model_; }
    const LatentLM& model() const { return *model_; }
    std::uint64_t step_count() const { return step_; }
    Rng& rng() { return rng_; }

private:
    RunConfig cfg_;
    std::unique_ptr<LatentLM> model_;
    ParamList params_;
    std::unique_ptr<AdamW> opt_;
    Rng rng_;
    std::uint64_t step_ = 0;
};

/// Rebuilds a model (no optimizer) from a "latentlm" checkpoint.
LatentLM load_model(const Checkpoint& ckpt, RunConfig* cfg_out = nullptr);

}  // namespace latentlm

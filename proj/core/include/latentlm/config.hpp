#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "latentlm/model.hpp"
#include "latentlm/optim.hpp"
#include "latentlm/sigma_vae.hpp"

namespace latentlm {

/// `[section]` headers, `key = value` lines, `#` comments.
class ConfigFile {
public:
    struct Entry {
        std::string value;
        std::size_t line = 0;
    };

    static ConfigFile parse(std::string_view text, const std::string& source = "<config>");
    static ConfigFile load(const std::string& path);

    const std::map<std::string, std::map<std::string, Entry>>& sections() const { return sections_; }
    const std::string& source() const { return source_; }

private:
    std::string source_;
    std::map<std::string, std::map<std::string, Entry>> sections_;
};

struct TrainOptions {
    std::size_t total_steps = 2000;
    std::size_t warmup_steps = 100;
    std::size_t batch_size = 16;
    double grad_clip = 1.0;
    double lr_min = 0.0;
    double cfg_drop_prob = 0.1;
    std::size_t log_every = 10;
    std::size_t checkpoint_every = 500;
    std::uint64_t seed = 0;
};

enum class TaskKind { markov, gmm, shard };

struct DataOptions {
    TaskKind task = TaskKind::markov;
    std::size_t n_train = 512;
    std::size_t n_eval = 128;
    std::size_t length = 64;  // Markov tokens per sequence
    std::string shard;        // training shard when task = shard
    std::string eval_shard;
};

struct GenerateOptions {
    diffusion::SamplerConfig sampler;
    DiscreteSampler discrete;
    std::size_t max_new = 32;
    std::size_t n_samples = 4;
    std::string prompt;  // sequence text form; empty starts from <BOS>
};

struct RunConfig {
    ModelConfig model;
    AdamWConfig optim{1e-3, 0.9, 0.98, 1e-8, 0.1};
    TrainOptions train;
    DataOptions data;
    GenerateOptions generate;
    vae::VaeConfig vae;
    vae::VaeTrainConfig vae_train;
    std::size_t vae_n_train = 4096;

    void validate() const;
};

/// Unknown sections or keys, and malformed values, throw ConfigError naming
/// the line.
RunConfig run_config_from(const ConfigFile& file);
RunConfig load_run_config(const std::string& path);
/// Canonical text that run_config_from parses back to the same values.
std::string to_text(const RunConfig& cfg);

std::string to_string(TaskKind kind);

}  // namespace latentlm

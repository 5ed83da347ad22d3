#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "latentlm/layers.hpp"
#include "latentlm/ops.hpp"

namespace latentlm::nn {

struct BackboneConfig {
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t n_kv_heads = 4;
    std::size_t d_ffn = 256;
    std::size_t max_seq_len = 256;
    double rope_base = 10000.0;

    /// Throws ConfigError on inconsistent sizes.
    void validate() const;
    std::size_t head_dim() const { return d_model / n_heads; }
    std::size_t kv_dim() const { return n_kv_heads * head_dim(); }
};

/// Per-layer keys (post-rotary) and values for one generation stream.
/// Append-only until reset().
class KVCache {
public:
    explicit KVCache(const BackboneConfig& cfg);

    std::size_t filled() const { return filled_; }
    std::size_t capacity() const { return capacity_; }
    std::size_t layers() const { return keys_.size(); }
    void reset() { filled_ = 0; }

    ad::KvPrefix prefix(std::size_t layer) const;
    /// Stages `rows` new key/value rows for a layer at position filled().
    void write(std::size_t layer, std::span<const double> keys, std::span<const double> values, std::size_t rows);
    /// Commits rows staged by write() on every layer.
    void advance(std::size_t rows);

private:
    std::size_t kv_dim_;
    std::size_t capacity_;
    std::size_t filled_ = 0;
    std::vector<std::vector<double>> keys_;
    std::vector<std::vector<double>> values_;
};

enum class AttentionMask { causal, bidirectional };

/// W_down(silu(W_gate x) * (W_up x))
class SwiGlu {
public:
    SwiGlu() = default;
    SwiGlu(std::size_t d_model, std::size_t d_ffn, Rng& rng);
    ad::Tensor operator()(const ad::Tensor& x) const;
    void collect(ParamList& out, const std::string& prefix) const;

    Linear gate, up, down;
};

/// Rotary embedding for rows of [n_heads * head_dim], first row at
/// start_position.
ad::Tensor rope_apply(const ad::Tensor& x, std::size_t n_heads, std::size_t start_position, double base);

struct DecoderLayer {
    ad::Tensor attn_norm;
    Linear wq, wk, wv, wo;
    ad::Tensor ffn_norm;
    SwiGlu ffn;
};

/// Pre-norm causal decoder stack with a final RMSNorm.
class Transformer {
public:
    Transformer() = default;
    Transformer(const BackboneConfig& cfg, Rng& rng);

    /// Packed forward. `segment_rows` splits the rows of x into independent
    /// sequences; `caches` is empty or holds one cache per segment (a
    /// segment continues from its cache's filled() position and appends to it).
    ad::Tensor forward(const ad::Tensor& x, std::span<const std::size_t> segment_rows,
                       std::span<KVCache* const> caches = {}, AttentionMask mask = AttentionMask::causal) const;

    /// Single sequence convenience form.
    ad::Tensor forward(const ad::Tensor& x, KVCache* cache = nullptr,
                       AttentionMask mask = AttentionMask::causal) const;

    const BackboneConfig& config() const { return cfg_; }
    void collect(ParamList& out, const std::string& prefix) const;

    std::vector<DecoderLayer>& layers() { return layers_; }
    const ad::Tensor& final_norm() const { return final_norm_; }

    /// Backbone rows evaluated since the last reset (one per row per forward).
    std::size_t rows_processed() const { return rows_processed_; }
    /// forward() invocations since the last reset.
    std::size_t forward_calls() const { return forward_calls_; }
    void reset_counters() const { rows_processed_ = 0; forward_calls_ = 0; }

private:
    BackboneConfig cfg_;
    std::vector<DecoderLayer> layers_;
    ad::Tensor final_norm_;
    mutable std::size_t rows_processed_ = 0;
    mutable std::size_t forward_calls_ = 0;
};

}  // namespace latentlm::nn

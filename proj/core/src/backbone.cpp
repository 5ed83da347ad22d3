#include "latentlm/backbone.hpp"

#include <algorithm>
#include <numeric>

#include "latentlm/errors.hpp"

namespace latentlm::nn {

void BackboneConfig::validate() const {
    if (d_model == 0 || n_heads == 0 || n_kv_heads == 0 || d_ffn == 0 || max_seq_len == 0) {
        throw ConfigError("backbone: sizes must be positive");
    }
    if (d_model % n_heads != 0) throw ConfigError("backbone: d_model must be divisible by n_heads");
    if (n_kv_heads > n_heads || n_heads % n_kv_heads != 0) {
        throw ConfigError("backbone: n_kv_heads must divide n_heads");
    }
    if (head_dim() % 2 != 0) throw ConfigError("backbone: head_dim must be even for rotary embeddings");
    if (rope_base <= 1.0) throw ConfigError("backbone: rope_base must exceed 1");
}

KVCache::KVCache(const BackboneConfig& cfg)
    : kv_dim_(cfg.kv_dim()),
      capacity_(cfg.max_seq_len),
      keys_(cfg.n_layers, std::vector<double>(cfg.max_seq_len * cfg.kv_dim())),
      values_(cfg.n_layers, std::vector<double>(cfg.max_seq_len * cfg.kv_dim())) {}

ad::KvPrefix KVCache::prefix(std::size_t layer) const {
    return {std::span<const double>(keys_[layer]).first(filled_ * kv_dim_),
            std::span<const double>(values_[layer]).first(filled_ * kv_dim_), filled_};
}

void KVCache::write(std::size_t layer, std::span<const double> keys, std::span<const double> values,
                    std::size_t rows) {
    if (filled_ + rows > capacity_) {
        throw CapacityError("kv cache: " + std::to_string(filled_ + rows) + " positions exceed capacity " +
                            std::to_string(capacity_));
    }
    std::copy(keys.begin(), keys.end(), keys_[layer].begin() + static_cast<std::ptrdiff_t>(filled_ * kv_dim_));
    std::copy(values.begin(), values.end(),
              values_[layer].begin() + static_cast<std::ptrdiff_t>(filled_ * kv_dim_));
}

void KVCache::advance(std::size_t rows) {
    if (filled_ + rows > capacity_) throw CapacityError("kv cache: advance beyond capacity");
    filled_ += rows;
}

SwiGlu::SwiGlu(std::size_t d_model, std::size_t d_ffn, Rng& rng)
    : gate(d_model, d_ffn, false, rng), up(d_model, d_ffn, false, rng), down(d_ffn, d_model, false, rng) {}

ad::Tensor SwiGlu::operator()(const ad::Tensor& x) const {
    return down(ad::mul(ad::silu(gate(x)), up(x)));
}

void SwiGlu::collect(ParamList& out, const std::string& prefix) const {
    gate.collect(out, prefix + ".gate");
    up.collect(out, prefix + ".up");
    down.collect(out, prefix + ".down");
}

ad::Tensor rope_apply(const ad::Tensor& x, std::size_t n_heads, std::size_t start_position, double base) {
    std::vector<std::size_t> positions(x.rows());
    std::iota(positions.begin(), positions.end(), start_position);
    return ad::rope(x, positions, n_heads, base);
}

Transformer::Transformer(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t d = cfg.d_model, qdim = cfg.n_heads * cfg.head_dim(), kvdim = cfg.kv_dim();
    layers_.reserve(cfg.n_layers);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        DecoderLayer layer;
        layer.attn_norm = ad::Tensor::full({d}, 1.0, true);
        layer.wq = Linear(d, qdim, false, rng);
        layer.wk = Linear(d, kvdim, false, rng);
        layer.wv = Linear(d, kvdim, false, rng);
        layer.wo = Linear(qdim, d, false, rng);
        layer.ffn_norm = ad::Tensor::full({d}, 1.0, true);
        layer.ffn = SwiGlu(d, cfg.d_ffn, rng);
        layers_.push_back(std::move(layer));
    }
    final_norm_ = ad::Tensor::full({d}, 1.0, true);
}

ad::Tensor Transformer::forward(const ad::Tensor& x, std::span<const std::size_t> segment_rows,
                                std::span<KVCache* const> caches, AttentionMask mask) const {
    if (x.dim() != 2 || x.cols() != cfg_.d_model) {
        throw DimensionError("transformer: input " + ad::shape_string(x.shape()) + " is not [N x " +
                             std::to_string(cfg_.d_model) + "]");
    }
    const std::size_t total = std::accumulate(segment_rows.begin(), segment_rows.end(), std::size_t{0});
    if (total != x.rows()) throw DimensionError("transformer: segment lengths do not cover the input rows");
    if (!caches.empty() && caches.size() != segment_rows.size()) {
        throw ArgumentError("transformer: need one cache per segment");
    }
    if (x.rows() == 0) return ad::rmsnorm(x, final_norm_);

    // Absolute positions and the attention layout are shared by all layers.
    std::vector<std::size_t> positions(x.rows());
    std::vector<ad::AttentionSegment> segments(segment_rows.size());
    std::size_t row = 0;
    for (std::size_t s = 0; s < segment_rows.size(); ++s) {
        const std::size_t start = caches.empty() ? 0 : caches[s]->filled();
        if (start + segment_rows[s] > cfg_.max_seq_len) {
            throw CapacityError("transformer: sequence of " + std::to_string(start + segment_rows[s]) +
                                " positions exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
        }
        if (!caches.empty()) {
            for (std::size_t o = 0; o < s; ++o)
                if (caches[o] == caches[s]) throw ArgumentError("transformer: a cache may serve only one segment");
        }
        for (std::size_t i = 0; i < segment_rows[s]; ++i) positions[row + i] = start + i;
        segments[s].row_begin = row;
        segments[s].rows = segment_rows[s];
        row += segment_rows[s];
    }

    const std::size_t H = cfg_.n_heads, G = cfg_.n_kv_heads, hd = cfg_.head_dim(), kvdim = cfg_.kv_dim();
    ad::Tensor h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& layer = layers_[l];
        auto a = ad::rmsnorm(h, layer.attn_norm);
        auto q = ad::rope(layer.wq(a), positions, H, cfg_.rope_base);
        auto k = ad::rope(layer.wk(a), positions, G, cfg_.rope_base);
        auto v = layer.wv(a);

        ad::AttentionSpec spec{H, G, hd, mask == AttentionMask::causal, segments};
        if (!caches.empty()) {
            for (std::size_t s = 0; s < segments.size(); ++s) spec.segments[s].past = caches[s]->prefix(l);
        }
        auto o = ad::attention(q, k, v, std::move(spec));
        if (!caches.empty()) {
            for (std::size_t s = 0; s < segments.size(); ++s) {
                const auto begin = segments[s].row_begin * kvdim, n = segments[s].rows * kvdim;
                caches[s]->write(l, k.data().subspan(begin, n), v.data().subspan(begin, n), segments[s].rows);
            }
        }
        h = ad::add(h, layer.wo(o));
        h = ad::add(h, layer.ffn(ad::rmsnorm(h, layer.ffn_norm)));
    }
    for (std::size_t s = 0; s < caches.size(); ++s) caches[s]->advance(segment_rows[s]);
    rows_processed_ += x.rows();
    ++forward_calls_;
    return ad::rmsnorm(h, final_norm_);
}

ad::Tensor Transformer::forward(const ad::Tensor& x, KVCache* cache, AttentionMask mask) const {
    const std::size_t rows[1] = {x.dim() == 2 ? x.rows() : 0};
    if (cache) {
        KVCache* cs[1] = {cache};
        return forward(x, rows, cs, mask);
    }
    return forward(x, rows, {}, mask);
}

void Transformer::collect(ParamList& out, const std::string& prefix) const {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto p = prefix + ".layers." + std::to_string(l);
        out.push_back({p + ".attn_norm", layers_[l].attn_norm, false});
        layers_[l].wq.collect(out, p + ".wq");
        layers_[l].wk.collect(out, p + ".wk");
        layers_[l].wv.collect(out, p + ".wv");
        layers_[l].wo.collect(out, p + ".wo");
        out.push_back({p + ".ffn_norm", layers_[l].ffn_norm, false});
        layers_[l].ffn.collect(out, p + ".ffn");
    }
    out.push_back({prefix + ".final_norm", final_norm_, false});
}

}  // namespace latentlm::nn

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "latentlm/tensor.hpp"

namespace latentlm::ad {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// Broadcast a length-d vector over every row of x (x.cols() == d).
Tensor add_row(const Tensor& x, const Tensor& row);
Tensor mul_row(const Tensor& x, const Tensor& row);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// [m x k] . [k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [m x k] . [n x k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);

inline constexpr double kRmsNormEps = 1e-6;

/// Row-wise x / sqrt(mean(x^2) + eps), times `gain` when defined.
Tensor rmsnorm(const Tensor& x, const Tensor& gain = Tensor{}, double eps = kRmsNormEps);

/// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& x);

/// Mean over rows of -log softmax(logits_row)[target]. A 1-D logits tensor is a
/// single row.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);
Tensor softmax_cross_entropy(const Tensor& logits, std::size_t target);

/// Per-row negative log-likelihoods, no graph.
std::vector<double> cross_entropy_values(const Tensor& logits, std::span<const std::size_t> targets);

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);

/// Rotary embedding on rows laid out as [n_heads * head_dim]; row r sits at
/// absolute position positions[r]. Pairs (2i, 2i+1) rotate by
/// pos * base^(-2i/head_dim).
Tensor rope(const Tensor& x, std::span<const std::size_t> positions, std::size_t n_heads, double base);

/// Keys/values already held in a cache, row-major [length x kv_dim].
struct KvPrefix {
    std::span<const double> keys;
    std::span<const double> values;
    std::size_t length = 0;
};

/// One independent sequence inside a packed batch of rows.
struct AttentionSegment {
    std::size_t row_begin = 0;
    std::size_t rows = 0;
    KvPrefix past;
};

struct AttentionSpec {
    std::size_t n_heads = 1;
    std::size_t n_kv_heads = 1;
    std::size_t head_dim = 1;
    bool causal = true;
    std::vector<AttentionSegment> segments;
};

/// Scaled dot-product attention over packed segments. q is [R x n_heads*hd],
/// k and v are [R x n_kv_heads*hd]; query head h reads kv head
/// h / (n_heads / n_kv_heads). Within a segment, query row i sits after
/// past.length cached keys and (when causal) sees keys 0 .. past.length + i.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, AttentionSpec spec);

}  // namespace latentlm::ad

#include "latentlm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "latentlm/errors.hpp"

namespace latentlm::ad {

using detail::make_result;
using detail::Node;
using detail::parent_grad;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                             shape_string(b.shape()) + " differ");
    }
}

template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df) {
    auto xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    return make_result(x.shape(), std::move(out), {x}, [df](Node& self) {
        auto* gx = parent_grad(self, 0);
        if (!gx) return;
        const auto& xv = self.parents[0]->value;
        for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += self.grad[i] * df(xv[i], self.value[i]);
    });
}

void check_row_broadcast(const Tensor& x, const Tensor& row, const char* op) {
    if (row.numel() != x.cols()) {
        throw DimensionError(std::string(op) + ": row of shape " + shape_string(row.shape()) +
                             " does not broadcast over " + shape_string(x.shape()));
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    auto av = a.data(), bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (auto* g = parent_grad(self, p)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    auto av = a.data(), bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        if (auto* g = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
        }
        if (auto* g = parent_grad(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    auto av = a.data(), bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        if (auto* g = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * bv[i];
        }
        if (auto* g = parent_grad(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * av[i];
        }
    });
}

Tensor add_row(const Tensor& x, const Tensor& row) {
    check_row_broadcast(x, row, "add_row");
    const std::size_t n = x.rows(), d = x.cols();
    std::vector<double> out(x.numel());
    auto xv = x.data(), rv = row.data();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] = xv[r * d + c] + rv[c];
    return make_result(x.shape(), std::move(out), {x, row}, [n, d](Node& self) {
        if (auto* g = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
        }
        if (auto* g = parent_grad(self, 1)) {
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) (*g)[c] += self.grad[r * d + c];
        }
    });
}

Tensor mul_row(const Tensor& x, const Tensor& row) {
    check_row_broadcast(x, row, "mul_row");
    const std::size_t n = x.rows(), d = x.cols();
    std::vector<double> out(x.numel());
    auto xv = x.data(), rv = row.data();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] = xv[r * d + c] * rv[c];
    return make_result(x.shape(), std::move(out), {x, row}, [n, d](Node& self) {
        const auto& xv = self.parents[0]->value;
        const auto& rv = self.parents[1]->value;
        if (auto* g = parent_grad(self, 0)) {
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) (*g)[r * d + c] += self.grad[r * d + c] * rv[c];
        }
        if (auto* g = parent_grad(self, 1)) {
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) (*g)[c] += self.grad[r * d + c] * xv[r * d + c];
        }
    });
}

Tensor scale(const Tensor& x, double factor) {
    return unary(x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
    return unary(x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor silu(const Tensor& x) {
    return unary(
        x, [](double v) { return v / (1.0 + std::exp(-v)); },
        [](double v, double) {
            double s = 1.0 / (1.0 + std::exp(-v));
            return s * (1.0 + v * (1.0 - s));
        });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double v, double) {
            double s = 1.0 / (1.0 + std::exp(-v));
            return s * (1.0 - s);
        });
}

Tensor exp(const Tensor& x) {
    return unary(x, [](double v) { return std::exp(v); }, [](double v, double) { return std::exp(v); });
}

Tensor log(const Tensor& x) {
    return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor square(const Tensor& x) {
    return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return make_result({}, {s}, {x}, [](Node& self) {
        if (auto* g = parent_grad(self, 0)) {
            for (auto& gi : *g) gi += self.grad[0];
        }
    });
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw ArgumentError("mean: empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (b.dim() != 2 || a.dim() == 0 || a.cols() != b.shape()[0]) {
        throw DimensionError("matmul: inner dimensions of " + shape_string(a.shape()) + " and " +
                             shape_string(b.shape()) + " do not agree");
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.shape()[1];
    Shape out_shape = a.shape();
    out_shape.back() = n;
    std::vector<double> out(m * n, 0.0);
    auto av = a.data(), bv = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out.data() + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = av[i * k + kk];
            const double* brow = bv.data() + kk * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    return make_result(std::move(out_shape), std::move(out), {a, b}, [m, k, n](Node& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        const auto& gc = self.grad;
        if (auto* ga = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = gc.data() + i * n;
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const double* brow = bv.data() + kk * n;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    (*ga)[i * k + kk] += acc;
                }
            }
        }
        if (auto* gb = parent_grad(self, 1)) {
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = gc.data() + i * n;
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const double aik = av[i * k + kk];
                    double* gbrow = gb->data() + kk * n;
                    for (std::size_t j = 0; j < n; ++j) gbrow[j] += aik * grow[j];
                }
            }
        }
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (b.dim() != 2 || a.dim() == 0 || a.cols() != b.shape()[1]) {
        throw DimensionError("matmul_nt: inner dimensions of " + shape_string(a.shape()) + " and " +
                             shape_string(b.shape()) + "^T do not agree");
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.shape()[0];
    Shape out_shape = a.shape();
    out_shape.back() = n;
    std::vector<double> out(m * n);
    auto av = a.data(), bv = b.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += av[i * k + kk] * bv[j * k + kk];
            out[i * n + j] = acc;
        }
    return make_result(std::move(out_shape), std::move(out), {a, b}, [m, k, n](Node& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        const auto& gc = self.grad;
        if (auto* ga = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double g = gc[i * n + j];
                    for (std::size_t kk = 0; kk < k; ++kk) (*ga)[i * k + kk] += g * bv[j * k + kk];
                }
        }
        if (auto* gb = parent_grad(self, 1)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double g = gc[i * n + j];
                    for (std::size_t kk = 0; kk < k; ++kk) (*gb)[j * k + kk] += g * av[i * k + kk];
                }
        }
    });
}

Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps) {
    const std::size_t n = x.rows(), d = x.cols();
    if (d == 0) throw DimensionError("rmsnorm: empty feature axis");
    if (gain.defined()) check_row_broadcast(x, gain, "rmsnorm");
    std::vector<double> out(x.numel());
    std::vector<double> inv_rms(n);
    auto xv = x.data();
    for (std::size_t r = 0; r < n; ++r) {
        double ms = 0.0;
        for (std::size_t c = 0; c < d; ++c) ms += xv[r * d + c] * xv[r * d + c];
        ms /= static_cast<double>(d);
        inv_rms[r] = 1.0 / std::sqrt(ms + eps);
        for (std::size_t c = 0; c < d; ++c) {
            double y = xv[r * d + c] * inv_rms[r];
            out[r * d + c] = gain.defined() ? y * gain.data()[c] : y;
        }
    }
    return make_result(x.shape(), std::move(out), {x, gain}, [n, d, inv_rms = std::move(inv_rms)](Node& self) {
        const auto& xv = self.parents[0]->value;
        const bool has_gain = self.parents[1] != nullptr;
        const double* gv = has_gain ? self.parents[1]->value.data() : nullptr;
        auto* gx = parent_grad(self, 0);
        auto* gg = has_gain ? parent_grad(self, 1) : nullptr;
        for (std::size_t r = 0; r < n; ++r) {
            const double ir = inv_rms[r];
            const double* dy = self.grad.data() + r * d;
            const double* xr = xv.data() + r * d;
            if (gg) {
                for (std::size_t c = 0; c < d; ++c) (*gg)[c] += dy[c] * xr[c] * ir;
            }
            if (gx) {
                double dot = 0.0;
                for (std::size_t c = 0; c < d; ++c) dot += dy[c] * (gv ? gv[c] : 1.0) * xr[c];
                const double k = ir * ir * ir * dot / static_cast<double>(d);
                for (std::size_t c = 0; c < d; ++c) {
                    const double u = dy[c] * (gv ? gv[c] : 1.0);
                    (*gx)[r * d + c] += ir * u - k * xr[c];
                }
            }
        }
    });
}

Tensor softmax_rows(const Tensor& x) {
    const std::size_t n = x.rows(), d = x.cols();
    std::vector<double> out(x.numel());
    auto xv = x.data();
    for (std::size_t r = 0; r < n; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < d; ++c) mx = std::max(mx, xv[r * d + c]);
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            out[r * d + c] = std::exp(xv[r * d + c] - mx);
            s += out[r * d + c];
        }
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] /= s;
    }
    return make_result(x.shape(), std::move(out), {x}, [n, d](Node& self) {
        auto* gx = parent_grad(self, 0);
        if (!gx) return;
        for (std::size_t r = 0; r < n; ++r) {
            const double* y = self.value.data() + r * d;
            const double* dy = self.grad.data() + r * d;
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += dy[c] * y[c];
            for (std::size_t c = 0; c < d; ++c) (*gx)[r * d + c] += y[c] * (dy[c] - dot);
        }
    });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
    const std::size_t n = logits.rows(), v = logits.cols();
    if (targets.size() != n) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                             std::to_string(n) + " rows");
    }
    if (n == 0) throw ArgumentError("softmax_cross_entropy: no rows");
    std::vector<double> probs(logits.numel());
    auto lv = logits.data();
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        if (targets[r] >= v) {
            throw IndexError("softmax_cross_entropy: target " + std::to_string(targets[r]) +
                             " out of range for vocabulary of " + std::to_string(v));
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < v; ++c) mx = std::max(mx, lv[r * v + c]);
        double s = 0.0;
        for (std::size_t c = 0; c < v; ++c) {
            probs[r * v + c] = std::exp(lv[r * v + c] - mx);
            s += probs[r * v + c];
        }
        for (std::size_t c = 0; c < v; ++c) probs[r * v + c] /= s;
        total += std::log(s) + mx - lv[r * v + targets[r]];
    }
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    return make_result({}, {total / static_cast<double>(n)}, {logits},
                       [n, v, probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
                           auto* gl = parent_grad(self, 0);
                           if (!gl) return;
                           const double g = self.grad[0] / static_cast<double>(n);
                           for (std::size_t r = 0; r < n; ++r) {
                               for (std::size_t c = 0; c < v; ++c) (*gl)[r * v + c] += g * probs[r * v + c];
                               (*gl)[r * v + tgt[r]] -= g;
                           }
                       });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::size_t target) {
    std::size_t t[1] = {target};
    return softmax_cross_entropy(logits, std::span<const std::size_t>(t, 1));
}

std::vector<double> cross_entropy_values(const Tensor& logits, std::span<const std::size_t> targets) {
    const std::size_t n = logits.rows(), v = logits.cols();
    if (targets.size() != n) throw DimensionError("cross_entropy_values: target count mismatch");
    std::vector<double> out(n);
    auto lv = logits.data();
    for (std::size_t r = 0; r < n; ++r) {
        if (targets[r] >= v) throw IndexError("cross_entropy_values: target out of range");
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < v; ++c) mx = std::max(mx, lv[r * v + c]);
        double s = 0.0;
        for (std::size_t c = 0; c < v; ++c) s += std::exp(lv[r * v + c] - mx);
        out[r] = std::log(s) + mx - lv[r * v + targets[r]];
    }
    return out;
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
    const std::size_t vocab = table.rows(), d = table.cols();
    std::vector<double> out(ids.size() * d);
    auto tv = table.data();
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] >= vocab) {
            throw IndexError("gather_rows: row " + std::to_string(ids[r]) + " out of range for table of " +
                             std::to_string(vocab) + " rows");
        }
        std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(ids[r] * d), d, out.begin() + static_cast<std::ptrdiff_t>(r * d));
    }
    std::vector<std::size_t> idx(ids.begin(), ids.end());
    return make_result({ids.size(), d}, std::move(out), {table}, [d, idx = std::move(idx)](Node& self) {
        auto* gt = parent_grad(self, 0);
        if (!gt) return;
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t c = 0; c < d; ++c) (*gt)[idx[r] * d + c] += self.grad[r * d + c];
    });
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ArgumentError("concat_rows: nothing to concatenate");
    const std::size_t d = parts[0].cols();
    std::size_t total = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        if (p.cols() != d) {
            throw DimensionError("concat_rows: column mismatch " + shape_string(parts[0].shape()) + " vs " +
                                 shape_string(p.shape()));
        }
        offsets.push_back(total);
        total += p.rows();
    }
    std::vector<double> out;
    out.reserve(total * d);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    std::vector<Tensor> parents(parts.begin(), parts.end());
    return make_result({total, d}, std::move(out), std::move(parents), [d, offsets](Node& self) {
        for (std::size_t p = 0; p < offsets.size(); ++p) {
            auto* g = parent_grad(self, p);
            if (!g) continue;
            const std::size_t base = offsets[p] * d;
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[base + i];
        }
    });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    const std::size_t d = x.cols();
    if (begin > end || end > x.rows()) {
        throw IndexError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
                         shape_string(x.shape()));
    }
    auto xv = x.data();
    std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(begin * d),
                            xv.begin() + static_cast<std::ptrdiff_t>(end * d));
    return make_result({end - begin, d}, std::move(out), {x}, [begin, d](Node& self) {
        auto* g = parent_grad(self, 0);
        if (!g) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[begin * d + i] += self.grad[i];
    });
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw ArgumentError("concat_cols: nothing to concatenate");
    const std::size_t n = parts[0].rows();
    std::size_t total = 0;
    std::vector<std::size_t> offsets, widths;
    for (const auto& p : parts) {
        if (p.rows() != n) throw DimensionError("concat_cols: row count mismatch");
        offsets.push_back(total);
        widths.push_back(p.cols());
        total += p.cols();
    }
    std::vector<double> out(n * total);
    for (std::size_t p = 0; p < parts.size(); ++p) {
        auto pv = parts[p].data();
        for (std::size_t r = 0; r < n; ++r)
            std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(r * widths[p]), widths[p],
                        out.begin() + static_cast<std::ptrdiff_t>(r * total + offsets[p]));
    }
    std::vector<Tensor> parents(parts.begin(), parts.end());
    return make_result({n, total}, std::move(out), std::move(parents), [n, total, offsets, widths](Node& self) {
        for (std::size_t p = 0; p < offsets.size(); ++p) {
            auto* g = parent_grad(self, p);
            if (!g) continue;
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < widths[p]; ++c)
                    (*g)[r * widths[p] + c] += self.grad[r * total + offsets[p] + c];
        }
    });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
    const std::size_t n = x.rows(), d = x.cols();
    if (begin > end || end > d) {
        throw IndexError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
                         shape_string(x.shape()));
    }
    const std::size_t w = end - begin;
    std::vector<double> out(n * w);
    auto xv = x.data();
    for (std::size_t r = 0; r < n; ++r)
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(r * d + begin), w,
                    out.begin() + static_cast<std::ptrdiff_t>(r * w));
    return make_result({n, w}, std::move(out), {x}, [n, d, w, begin](Node& self) {
        auto* g = parent_grad(self, 0);
        if (!g) return;
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < w; ++c) (*g)[r * d + begin + c] += self.grad[r * w + c];
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    return make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
        auto* g = parent_grad(self, 0);
        if (!g) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    });
}

Tensor rope(const Tensor& x, std::span<const std::size_t> positions, std::size_t n_heads, double base) {
    const std::size_t n = x.rows(), d = x.cols();
    if (positions.size() != n) throw DimensionError("rope: one position per row required");
    if (n_heads == 0 || d % n_heads != 0) throw ConfigError("rope: row width not divisible by head count");
    const std::size_t hd = d / n_heads;
    if (hd % 2 != 0) throw ConfigError("rope: head_dim must be even, got " + std::to_string(hd));
    const std::size_t half = hd / 2;
    std::vector<double> inv_freq(half);
    for (std::size_t i = 0; i < half; ++i)
        inv_freq[i] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
    std::vector<double> cos_t(n * half), sin_t(n * half);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < half; ++i) {
            const double angle = static_cast<double>(positions[r]) * inv_freq[i];
            cos_t[r * half + i] = std::cos(angle);
            sin_t[r * half + i] = std::sin(angle);
        }
    std::vector<double> out(x.numel());
    auto xv = x.data();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t h = 0; h < n_heads; ++h)
            for (std::size_t i = 0; i < half; ++i) {
                const std::size_t o = r * d + h * hd + 2 * i;
                const double c = cos_t[r * half + i], s = sin_t[r * half + i];
                out[o] = xv[o] * c - xv[o + 1] * s;
                out[o + 1] = xv[o] * s + xv[o + 1] * c;
            }
    return make_result(x.shape(), std::move(out), {x},
                       [n, d, hd, half, n_heads, cos_t = std::move(cos_t), sin_t = std::move(sin_t)](Node& self) {
                           auto* g = parent_grad(self, 0);
                           if (!g) return;
                           for (std::size_t r = 0; r < n; ++r)
                               for (std::size_t h = 0; h < n_heads; ++h)
                                   for (std::size_t i = 0; i < half; ++i) {
                                       const std::size_t o = r * d + h * hd + 2 * i;
                                       const double c = cos_t[r * half + i], s = sin_t[r * half + i];
                                       (*g)[o] += self.grad[o] * c + self.grad[o + 1] * s;
                                       (*g)[o + 1] += -self.grad[o] * s + self.grad[o + 1] * c;
                                   }
                       });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, AttentionSpec spec) {
    const std::size_t H = spec.n_heads, G = spec.n_kv_heads, hd = spec.head_dim;
    if (H == 0 || G == 0 || H % G != 0) throw ConfigError("attention: n_heads must be a multiple of n_kv_heads");
    const std::size_t qdim = H * hd, kvdim = G * hd;
    if (q.cols() != qdim || k.cols() != kvdim || v.cols() != kvdim || k.rows() != q.rows() ||
        v.rows() != q.rows()) {
        throw DimensionError("attention: q " + shape_string(q.shape()) + ", k " + shape_string(k.shape()) +
                             ", v " + shape_string(v.shape()) + " inconsistent with heads");
    }
    const std::size_t R = q.rows();
    for (const auto& seg : spec.segments) {
        if (seg.row_begin + seg.rows > R) throw IndexError("attention: segment exceeds packed rows");
        if (seg.past.keys.size() < seg.past.length * kvdim || seg.past.values.size() < seg.past.length * kvdim)
            throw DimensionError("attention: cached prefix shorter than its declared length");
    }
    const std::size_t group = H / G;
    const double scl = 1.0 / std::sqrt(static_cast<double>(hd));

    // probs laid out per segment, per head, per query row: `allowed` entries each.
    std::vector<std::size_t> prob_offset;
    std::size_t prob_total = 0;
    for (const auto& seg : spec.segments) {
        const std::size_t P = seg.past.length, K = P + seg.rows;
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t i = 0; i < seg.rows; ++i) {
                prob_offset.push_back(prob_total);
                prob_total += spec.causal ? P + i + 1 : K;
            }
    }
    std::vector<double> probs(prob_total);
    std::vector<double> out(R * qdim, 0.0);
    auto qv = q.data(), kv = k.data(), vv = v.data();

    std::size_t slot = 0;
    for (const auto& seg : spec.segments) {
        const std::size_t P = seg.past.length, K = P + seg.rows;
        auto key_row = [&](std::size_t j, std::size_t g) {
            return j < P ? seg.past.keys.data() + j * kvdim + g * hd
                         : kv.data() + (seg.row_begin + j - P) * kvdim + g * hd;
        };
        auto val_row = [&](std::size_t j, std::size_t g) {
            return j < P ? seg.past.values.data() + j * kvdim + g * hd
                         : vv.data() + (seg.row_begin + j - P) * kvdim + g * hd;
        };
        for (std::size_t h = 0; h < H; ++h) {
            const std::size_t g = h / group;
            for (std::size_t i = 0; i < seg.rows; ++i, ++slot) {
                const std::size_t allowed = spec.causal ? P + i + 1 : K;
                double* p = probs.data() + prob_offset[slot];
                const double* qi = qv.data() + (seg.row_begin + i) * qdim + h * hd;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < allowed; ++j) {
                    const double* kj = key_row(j, g);
                    double s = 0.0;
                    for (std::size_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
                    p[j] = s * scl;
                    mx = std::max(mx, p[j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < allowed; ++j) {
                    p[j] = std::exp(p[j] - mx);
                    z += p[j];
                }
                double* oi = out.data() + (seg.row_begin + i) * qdim + h * hd;
                for (std::size_t j = 0; j < allowed; ++j) {
                    p[j] /= z;
                    const double* vj = val_row(j, g);
                    for (std::size_t c = 0; c < hd; ++c) oi[c] += p[j] * vj[c];
                }
            }
        }
    }

    return make_result(
        q.shape(), std::move(out), {q, k, v},
        [spec = std::move(spec), probs = std::move(probs), prob_offset = std::move(prob_offset), qdim, kvdim, group,
         scl](Node& self) {
            const std::size_t H = spec.n_heads, hd = spec.head_dim;
            const auto& qv = self.parents[0]->value;
            const auto& kv = self.parents[1]->value;
            const auto& vv = self.parents[2]->value;
            auto* gq = parent_grad(self, 0);
            auto* gk = parent_grad(self, 1);
            auto* gv = parent_grad(self, 2);
            std::vector<double> dp;
            std::size_t slot = 0;
            for (const auto& seg : spec.segments) {
                const std::size_t P = seg.past.length;
                for (std::size_t h = 0; h < H; ++h) {
                    const std::size_t g = h / group;
                    for (std::size_t i = 0; i < seg.rows; ++i, ++slot) {
                        const std::size_t allowed = spec.causal ? P + i + 1 : P + seg.rows;
                        const double* p = probs.data() + prob_offset[slot];
                        const std::size_t qrow = seg.row_begin + i;
                        const double* dout = self.grad.data() + qrow * qdim + h * hd;
                        const double* qi = qv.data() + qrow * qdim + h * hd;
                        dp.assign(allowed, 0.0);
                        double dot = 0.0;
                        for (std::size_t j = 0; j < allowed; ++j) {
                            const double* vj = j < P ? seg.past.values.data() + j * kvdim + g * hd
                                                     : vv.data() + (seg.row_begin + j - P) * kvdim + g * hd;
                            double s = 0.0;
                            for (std::size_t c = 0; c < hd; ++c) s += dout[c] * vj[c];
                            dp[j] = s;
                            dot += p[j] * s;
                        }
                        for (std::size_t j = 0; j < allowed; ++j) {
                            const double ds = p[j] * (dp[j] - dot) * scl;
                            const double* kj = j < P ? seg.past.keys.data() + j * kvdim + g * hd
                                                     : kv.data() + (seg.row_begin + j - P) * kvdim + g * hd;
                            if (gq) {
                                double* gqi = gq->data() + qrow * qdim + h * hd;
                                for (std::size_t c = 0; c < hd; ++c) gqi[c] += ds * kj[c];
                            }
                            if (j >= P) {
                                const std::size_t krow = seg.row_begin + j - P;
                                if (gk) {
                                    double* gkj = gk->data() + krow * kvdim + g * hd;
                                    for (std::size_t c = 0; c < hd; ++c) gkj[c] += ds * qi[c];
                                }
                                if (gv) {
                                    double* gvj = gv->data() + krow * kvdim + g * hd;
                                    for (std::size_t c = 0; c < hd; ++c) gvj[c] += p[j] * dout[c];
                                }
                            }
                        }
                    }
                }
            }
        });
}

}  // namespace latentlm::ad

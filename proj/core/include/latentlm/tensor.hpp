#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace latentlm::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Arithmetic mode. Storage is always 64-bit; under f32 every op output is
/// rounded through float so values are exactly what a 32-bit engine would
/// hold. Accumulation inside kernels is 64-bit in both modes.
enum class Precision { f32, f64 };

Precision precision();

class PrecisionScope {
public:
    explicit PrecisionScope(Precision p);
    ~PrecisionScope();
    PrecisionScope(const PrecisionScope&) = delete;
    PrecisionScope& operator=(const PrecisionScope&) = delete;

private:
    Precision saved_;
};

bool grad_enabled();

/// Disables graph recording on this thread (inference).
class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    bool saved_;
};

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::vector<double>& ensure_grad();
};

}  // namespace detail

/// Shared handle to a dense row-major tensor. Copies alias the same storage.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim() const { return shape().size(); }
    std::size_t numel() const;
    /// Size of the last axis (1 for scalars).
    std::size_t cols() const;
    /// numel() / cols(): every leading axis is folded into rows.
    std::size_t rows() const;

    std::span<const double> data() const;
    /// Direct write access; only valid for leaves (parameters, constants).
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t row, std::size_t col) const;

    bool requires_grad() const;
    bool is_leaf() const;
    /// Empty span when no gradient has been accumulated yet.
    std::span<const double> grad() const;
    bool has_grad() const;
    void zero_grad();

    /// Same values, detached from the graph.
    Tensor detach() const;
    /// Deep copy as a fresh leaf.
    Tensor clone(bool requires_grad = false) const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

/// Reverse sweep from a scalar loss. Gradients accumulate into every leaf
/// that requires grad; interior nodes are released afterwards.
void backward(const Tensor& loss);

/// Rounds a value the way the current precision mode stores it.
double round_to_precision(double v);

namespace detail {

/// Builds an op result. `backward_fn` is only retained when some parent
/// requires grad and recording is enabled.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward_fn);

/// Gradient buffer of parent `i`, or nullptr when that parent is constant.
std::vector<double>* parent_grad(Node& self, std::size_t i);

}  // namespace detail

}  // namespace latentlm::ad

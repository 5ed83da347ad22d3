#include "latentlm/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "latentlm/errors.hpp"

namespace latentlm::ad {

namespace {
thread_local Precision g_precision = Precision::f32;
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Precision precision() { return g_precision; }

PrecisionScope::PrecisionScope(Precision p) : saved_(g_precision) { g_precision = p; }
PrecisionScope::~PrecisionScope() { g_precision = saved_; }

bool grad_enabled() { return g_grad_enabled; }

NoGradScope::NoGradScope() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradScope::~NoGradScope() { g_grad_enabled = saved_; }

double round_to_precision(double v) {
    return g_precision == Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

std::vector<double>& detail::Node::ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
}

static Tensor make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("tensor: shape " + shape_string(shape) + " does not match " +
                             std::to_string(data.size()) + " values");
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    for (auto& v : node->value) v = round_to_precision(v);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = shape_numel(shape);
    return make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto n = shape_numel(shape);
    return make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    return make_leaf(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return make_leaf({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }
std::size_t Tensor::cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }
std::size_t Tensor::rows() const {
    auto c = cols();
    return c == 0 ? 0 : numel() / c;
}

std::span<const double> Tensor::data() const { return node_->value; }

std::span<double> Tensor::mutable_data() {
    if (!is_leaf()) throw ContractError("mutable_data: tensor is not a leaf");
    return node_->value;
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item: tensor of shape " + shape_string(shape()) + " is not a scalar");
    return node_->value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const { return node_->value[row * cols() + col]; }

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return !node_->backward_fn; }
std::span<const double> Tensor::grad() const { return node_->grad; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const {
    auto node = std::make_shared<detail::Node>();
    node->shape = node_->shape;
    node->value = node_->value;
    return Tensor(std::move(node));
}

Tensor Tensor::clone(bool requires_grad) const {
    auto t = detach();
    t.node_->requires_grad = requires_grad;
    return t;
}

Tensor detail::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                           std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    if (g_precision == Precision::f32) {
        for (auto& v : node->value) v = static_cast<double>(static_cast<float>(v));
    }
    if (g_grad_enabled) {
        bool any = std::any_of(parents.begin(), parents.end(),
                               [](const Tensor& p) { return p.defined() && p.requires_grad(); });
        if (any) {
            node->requires_grad = true;
            node->parents.reserve(parents.size());
            for (auto& p : parents) node->parents.push_back(p.node());
            node->backward_fn = std::move(backward_fn);
        }
    }
    return Tensor(std::move(node));
}

std::vector<double>* detail::parent_grad(Node& self, std::size_t i) {
    auto& p = self.parents[i];
    if (!p || !p->requires_grad) return nullptr;
    return &p->ensure_grad();
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward: loss must be a scalar, got shape " +
                            (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) throw ContractError("backward: loss is not connected to any parameter");

    // Post-order DFS gives a topological order; walk it in reverse.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent && parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
    // Release the graph; leaves keep their accumulated gradients.
    for (auto* node : order) {
        if (node->backward_fn) {
            node->backward_fn = nullptr;
            node->parents.clear();
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
}

}  // namespace latentlm::ad

#include "shapeformer/nn/tensor.hpp"

#include <cmath>
#include <unordered_set>

#include "shapeformer/errors.hpp"

namespace shapeformer::nn {

namespace {
thread_local bool g_grad_enabled = true;
thread_local FreezeScope* g_freeze = nullptr;
} // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

std::vector<double>& Node::ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
}

void require_finite(std::span<const double> values, const char* what) {
    for (double v : values) {
        if (!std::isfinite(v)) throw NonFiniteValue(std::string("non-finite value in ") + what);
    }
}

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0); }

Tensor Tensor::full(const Shape& shape, double value) {
    auto node = std::make_shared<Node>();
    node->shape = shape;
    node->value.assign(shape_numel(shape), value);
    return Tensor(std::move(node));
}

Tensor Tensor::constant(const Shape& shape, std::vector<double> values) {
    if (values.size() != shape_numel(shape)) {
        throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
    }
    require_finite(values, "tensor constant");
    auto node = std::make_shared<Node>();
    node->shape = shape;
    node->value = std::move(values);
    return Tensor(std::move(node));
}

Tensor Tensor::leaf(const Shape& shape, std::vector<double> values) {
    Tensor t = constant(shape, std::move(values));
    t.node_->requires_grad = true;
    return t;
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (g_grad_enabled) {
        bool any = false;
        for (const auto& p : parents) any = any || p.requires_grad();
        if (any) {
            node->requires_grad = true;
            node->parents.reserve(parents.size());
            for (const auto& p : parents) node->parents.push_back(p.shared());
            node->backward_fn = std::move(backward_fn);
        }
    }
    return Tensor(std::move(node));
}

void backward(const Tensor& scalar) {
    if (scalar.numel() != 1) throw ShapeError("backward() needs a scalar");
    if (!scalar.requires_grad()) return;

    // Iterative post-order DFS; graphs for a training image are deep enough
    // that recursion is best avoided.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{scalar.node(), 0}};
    seen.insert(scalar.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.push_back({parent, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    scalar.node()->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (!node->backward_fn || node->grad.empty()) continue;
        for (auto& p : node->parents) {
            if (p->requires_grad) p->ensure_grad();
        }
        node->backward_fn(*node);
    }
    // Interior grads are no longer needed; leaves keep theirs.
    for (Node* node : order) {
        if (node->backward_fn) {
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
}

FreezeScope::FreezeScope(Mode mode) : mode_(mode), previous_(g_freeze) { g_freeze = this; }
FreezeScope::~FreezeScope() { g_freeze = previous_; }

FreezeScope* FreezeScope::active() { return g_freeze; }

std::vector<double> FreezeScope::pass(std::vector<double> values) {
    if (mode_ == Mode::Record) {
        slots_.push_back(values);
        return values;
    }
    if (cursor_ >= slots_.size()) {
        throw ShapeError("freeze replay requested more values than were recorded");
    }
    const auto& slot = slots_[cursor_++];
    if (slot.size() != values.size()) throw ShapeError("freeze replay size mismatch");
    return slot;
}

std::vector<double> frozen(std::vector<double> values) {
    if (g_freeze) return g_freeze->pass(std::move(values));
    return values;
}

} // namespace shapeformer::nn

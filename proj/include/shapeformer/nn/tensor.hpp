#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace shapeformer::nn {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// One vertex of the reverse-mode tape. Values are double precision so the
// finite-difference checker can resolve relative errors well below 1e-3.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Propagates this node's grad into its parents' grads.
    std::function<void(Node&)> backward_fn;

    std::vector<double>& ensure_grad();
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(const Shape& shape);
    static Tensor full(const Shape& shape, double value);
    // Constant (no gradient). Throws NonFiniteValue on NaN/Inf input.
    static Tensor constant(const Shape& shape, std::vector<double> values);
    // Trainable leaf.
    static Tensor leaf(const Shape& shape, std::vector<double> values);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    int dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const double> values() const { return node_->value; }
    // Direct write access; only for leaves (optimizers, initialisation, tests).
    std::span<double> mutable_values() { return node_->value; }
    std::span<const double> grad() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad();

    double item() const;
    double operator[](std::size_t i) const { return node_->value[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& shared() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Whether new ops record themselves on the tape (thread-local).
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Builds a result node; wires parents and the backward closure only when
// gradient recording is on and some parent requires a gradient.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward_fn);

// Runs reverse accumulation from a scalar.
void backward(const Tensor& scalar);

// Records or replays values that the forward pass treats as constants
// (stop-gradient outputs, argmax choices, thresholded masks). The gradient
// checker records them at the base point and replays them while perturbing,
// so finite differences see the same surrogate function that backprop
// differentiates.
class FreezeScope {
public:
    enum class Mode { Record, Replay };

    explicit FreezeScope(Mode mode);
    ~FreezeScope();
    FreezeScope(const FreezeScope&) = delete;
    FreezeScope& operator=(const FreezeScope&) = delete;

    void set_mode(Mode mode) {
        mode_ = mode;
        cursor_ = 0;
    }
    std::size_t recorded() const { return slots_.size(); }

    static FreezeScope* active();
    std::vector<double> pass(std::vector<double> values);

private:
    Mode mode_;
    std::vector<std::vector<double>> slots_;
    std::size_t cursor_ = 0;
    FreezeScope* previous_;
};

// Identity unless a FreezeScope is active.
std::vector<double> frozen(std::vector<double> values);

// Throws NonFiniteValue if any entry is NaN/Inf.
void require_finite(std::span<const double> values, const char* what);

} // namespace shapeformer::nn

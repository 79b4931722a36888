#pragma once

#include <vector>

#include "shapeformer/nn/tensor.hpp"

namespace shapeformer::nn {

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

class Sgd {
public:
    Sgd(std::vector<Tensor> params, double momentum = 0.9, double weight_decay = 0.0);
    void step(double lr);

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> velocity_;
    double momentum_;
    double weight_decay_;
};

class Adam {
public:
    explicit Adam(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);
    void step(double lr);

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double beta1_, beta2_, eps_;
    long steps_ = 0;
};

} // namespace shapeformer::nn

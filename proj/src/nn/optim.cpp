#include "shapeformer/nn/optim.hpp"

#include <cmath>

namespace shapeformer::nn {

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (auto& p : params) {
        for (double g : p.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double f = max_norm / norm;
        for (auto& p : params) {
            if (!p.has_grad()) continue;
            for (double& g : p.node()->grad) g *= f;
        }
    }
    return norm;
}

Sgd::Sgd(std::vector<Tensor> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    for (auto& p : params_) velocity_.emplace_back(p.numel(), 0.0);
}

void Sgd::step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.has_grad()) continue;
        auto values = p.mutable_values();
        auto grad = p.grad();
        auto& vel = velocity_[i];
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double g = grad[j] + weight_decay_ * values[j];
            vel[j] = momentum_ * vel[j] + g;
            values[j] -= lr * vel[j];
        }
    }
}

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void Adam::step(double lr) {
    ++steps_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.has_grad()) continue;
        auto values = p.mutable_values();
        auto grad = p.grad();
        for (std::size_t j = 0; j < values.size(); ++j) {
            m_[i][j] = beta1_ * m_[i][j] + (1 - beta1_) * grad[j];
            v_[i][j] = beta2_ * v_[i][j] + (1 - beta2_) * grad[j] * grad[j];
            values[j] -= lr * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps_);
        }
    }
}

} // namespace shapeformer::nn

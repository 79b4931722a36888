#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "shapeformer/nn/ops.hpp"
#include "shapeformer/nn/tensor.hpp"

namespace shapeformer::nn {

struct Parameter {
    std::string name;
    Tensor tensor;
};

enum class InitKind { Zeros, Ones, Uniform, Normal };

struct Init {
    InitKind kind = InitKind::Zeros;
    double scale = 0.0;  // half-width for Uniform, stddev for Normal

    static Init zeros() { return {InitKind::Zeros, 0.0}; }
    static Init ones() { return {InitKind::Ones, 0.0}; }
    static Init uniform(double bound) { return {InitKind::Uniform, bound}; }
    static Init normal(double stddev) { return {InitKind::Normal, stddev}; }
};

// Owns every trainable leaf of a model under a unique path. Initial values
// depend only on (seed, path), so two models that share a sub-module path
// start from identical weights for it.
class ParameterSet {
public:
    explicit ParameterSet(std::uint64_t seed = 0) : seed_(seed) {}

    Tensor add(const std::string& name, const Shape& shape, Init init);

    std::vector<Parameter>& items() { return params_; }
    const std::vector<Parameter>& items() const { return params_; }
    const Parameter* find(const std::string& name) const;
    std::vector<Tensor> tensors() const;
    std::vector<Tensor> tensors_with_prefix(const std::string& prefix) const;

    void zero_grad();
    std::size_t scalar_count() const;
    // FNV-1a over names, shapes and the raw bytes of every value.
    std::uint64_t hash() const;
    std::uint64_t hash_prefix(const std::string& prefix) const;

private:
    std::uint64_t seed_;
    std::vector<Parameter> params_;
};

// y = x W + b, x [m, in].
class Linear {
public:
    Linear() = default;
    Linear(ParameterSet& ps, const std::string& name, int in, int out, bool bias = true);
    Tensor operator()(const Tensor& x) const;

    Tensor weight;
    Tensor bias;
};

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(ParameterSet& ps, const std::string& name, int in, int out, int kernel, int stride,
           int padding);
    Tensor operator()(const Tensor& x) const;

    Tensor weight;
    Tensor bias;
    int stride = 1;
    int padding = 0;
};

class ConvTranspose2d {
public:
    ConvTranspose2d() = default;
    ConvTranspose2d(ParameterSet& ps, const std::string& name, int in, int out, int kernel,
                    int stride);
    Tensor operator()(const Tensor& x) const;

    Tensor weight;
    Tensor bias;
    int stride = 2;
};

class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(ParameterSet& ps, const std::string& name, int dim);
    Tensor operator()(const Tensor& x) const;

    Tensor gamma;
    Tensor beta;
};

// Linear layers with ReLU between them (none after the last).
class Mlp {
public:
    Mlp() = default;
    Mlp(ParameterSet& ps, const std::string& name, std::vector<int> dims);
    Tensor operator()(const Tensor& x) const;

    std::vector<Linear> layers;
};

struct AttentionOptions {
    int dim = 64;
    int heads = 1;
    // Divide logits by sqrt(head dim). Off reproduces softmax(M + QK^T)V literally.
    bool scale = true;
};

// Single- or multi-head attention without output projection:
// softmax(bias + Q K^T / sqrt(d)) V with Q = X Wq, K = Y Wk, V = Y Wv.
class Attention {
public:
    Attention() = default;
    Attention(ParameterSet& ps, const std::string& name, AttentionOptions opts);

    // bias: empty, or queries x keys additive logits (broadcast over heads).
    // weights_out, when non-null, receives the head-averaged attention weights.
    Tensor operator()(const Tensor& queries, const Tensor& keys, const Tensor& values,
                      std::span<const double> bias = {},
                      std::vector<double>* weights_out = nullptr) const;

    AttentionOptions opts;
    std::vector<Tensor> wq, wk, wv;  // one [dim, dim/heads] block per head
};

// Additive logit bias for a key grid: 0 where allowed, kMaskedLogit elsewhere,
// repeated for each query row.
std::vector<double> repeat_bias_rows(std::span<const double> key_bias, int query_rows);

// Fixed 2-D sinusoidal encoding for an h x w token grid, shape [h*w, dim].
std::vector<double> sinusoidal_positions(int h, int w, int dim);

// Flattens a [C, H, W] feature block into [H*W, C] tokens.
Tensor to_tokens(const Tensor& chw);

} // namespace shapeformer::nn

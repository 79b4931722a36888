#pragma once

#include <span>
#include <string>
#include <vector>

#include "shapeformer/config.hpp"
#include "shapeformer/nn/layers.hpp"

namespace shapeformer {

struct ShapePrior;

// Three conv3x3 (stride 1, ReLU) give F; deconv2x2/2 (ReLU) then conv1x1 give
// the pixel embedding E at twice the RoI resolution.
class MaskFeatureBranch {
public:
    MaskFeatureBranch() = default;
    MaskFeatureBranch(nn::ParameterSet& ps, const std::string& name, int dim);

    struct Output {
        nn::Tensor f;  // [C_e, H_r, W_r]
        nn::Tensor e;  // [C_e, 2H_r, 2W_r]
    };
    Output operator()(const nn::Tensor& roi) const;

    nn::Conv2d conv0, conv1, conv2;
    nn::ConvTranspose2d deconv;
    nn::Conv2d proj;
};

struct DecoderOptions {
    int dim = 64;
    int heads = 1;
    bool scale = true;
    bool pre_norm = true;
    bool ffn = true;
    int ffn_dim = 128;
    bool positional_encoding = false;

    static DecoderOptions from(const ModelOptions& m);
};

// One transformer decoder layer over a small query set and a token memory.
// Each sublayer is residual; with pre_norm the queries are normalised before
// the sublayer, otherwise after the residual sum.
class DecoderLayer {
public:
    enum class Order { SelfThenCross, CrossThenSelf };

    DecoderLayer() = default;
    DecoderLayer(nn::ParameterSet& ps, const std::string& name, const DecoderOptions& opts, Order order);

    // keys = memory (+ positions), values = memory. cross_bias has one entry per
    // memory token (broadcast over queries) or is empty.
    nn::Tensor operator()(const nn::Tensor& queries, const nn::Tensor& memory,
                          std::span<const double> positions, std::span<const double> cross_bias,
                          std::vector<double>* cross_weights = nullptr) const;

    DecoderOptions opts;
    Order order = Order::SelfThenCross;
    nn::Attention self_attn, cross_attn;
    nn::LayerNorm norm_self, norm_cross, norm_ffn;
    nn::Mlp ffn;

private:
    nn::Tensor self_block(const nn::Tensor& x) const;
    nn::Tensor cross_block(const nn::Tensor& x, const nn::Tensor& keys, const nn::Tensor& values,
                           std::span<const double> bias, std::vector<double>* weights) const;
    nn::Tensor ffn_block(const nn::Tensor& x) const;
};

// sigmoid(x E): per-pixel dot product over the channel axis.
// x [n, C], e [C, H, W] -> [n, H*W].
nn::Tensor extract_masks(const nn::Tensor& x, const nn::Tensor& e);

// Argmax with lowest-index tie-break.
int argmax(std::span<const double> values);

struct VisOccOutput {
    nn::Tensor x_v, x_o;    // [1, C_e]
    nn::Tensor m_v, m_o;    // [1, 4 H_r W_r]
    nn::Tensor probs;       // [1, C]
    int category = 0;
    // Bidirectional baseline only: amodal/occluded from the shared E_v.
    nn::Tensor x_a, x_p, m_a, m_p;
    // Last-layer cross-attention weights, one row per query.
    std::vector<double> attention;
};

class VisOccHead {
public:
    VisOccHead() = default;
    // bidirectional adds q_a and q_p to the same decoder (test-only baseline).
    VisOccHead(nn::ParameterSet& ps, const ModelOptions& opts, bool bidirectional = false,
               const std::string& name = "vis_occ");

    MaskFeatureBranch::Output vis_features(const nn::Tensor& roi) const;
    // Returns decoded queries [n_queries, C_e].
    nn::Tensor decode(const nn::Tensor& f_v, std::vector<double>* attention = nullptr) const;
    // Returns class probabilities [1, C].
    nn::Tensor classify(const nn::Tensor& x_v) const;
    VisOccOutput operator()(const nn::Tensor& roi) const;

    DecoderOptions dopts;
    bool bidirectional = false;
    int roi_size = 0;
    MaskFeatureBranch features;
    nn::Tensor q_v, q_o, q_a, q_p;
    std::vector<DecoderLayer> layers;
    nn::Mlp classifier;
};

// Additive cross-attention bias derived from a shape prior.
struct AttnBias {
    std::vector<double> grid;  // H_r * W_r entries in {0, kMaskedLogit}
    bool fallback = false;     // prior had no foreground; grid is all zero
};

// Binarise at 0.5, nearest-resize to roi_size^2, foreground -> 0, background
// -> kMaskedLogit; an all-background grid falls back to all zeros.
AttnBias prior_to_bias(const ShapePrior& prior, int roi_size);

struct SpaOutput {
    nn::Tensor z_a, z_p;  // [1, C_e]
    nn::Tensor m_a, m_p;  // [1, 4 H_r W_r]
    std::vector<double> attention;  // last-layer cross-attention, [2, H_r W_r]
};

class SpaHead {
public:
    SpaHead() = default;
    SpaHead(nn::ParameterSet& ps, const ModelOptions& opts, const std::string& name = "spa");

    MaskFeatureBranch::Output amodal_features(const nn::Tensor& roi) const;
    // queries [2, C_e] -> decoded [2, C_e].
    nn::Tensor decode(const nn::Tensor& queries, const nn::Tensor& f_a, std::span<const double> bias,
                      std::vector<double>* attention = nullptr) const;
    // bias: empty or H_r * W_r entries.
    SpaOutput operator()(const nn::Tensor& x_v, const nn::Tensor& x_o, const nn::Tensor& roi,
                         std::span<const double> bias) const;

    DecoderOptions dopts;
    bool stop_gradient = false;
    int roi_size = 0;
    nn::Mlp mlp_a, mlp_p;
    MaskFeatureBranch features;
    std::vector<DecoderLayer> layers;
};

} // namespace shapeformer

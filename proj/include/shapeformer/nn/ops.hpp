#pragma once

#include <span>
#include <vector>

#include "shapeformer/nn/tensor.hpp"

namespace shapeformer::nn {

// Large negative logit standing in for -inf in attention biases.
inline constexpr double kMaskedLogit = -1e9;

// --- dense algebra (2-D tensors are row-major [rows, cols]) ---
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// a[m, n] + bias[n] broadcast over rows.
Tensor add_row_bias(const Tensor& a, const Tensor& bias);
// Adds a constant (non-differentiable) array of identical size.
Tensor add_constant(const Tensor& a, std::span<const double> c);

// Under a FreezeScope the on/off pattern is recorded/replayed.
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor layer_norm_rows(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor reshape(const Tensor& a, const Shape& shape);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, int begin, int end);
// Rows of table[K, v] picked by index; gradient scatters back into the table.
Tensor gather_rows(const Tensor& table, std::span<const int> indices);

// Value copy with no gradient path. Under a FreezeScope the value is
// recorded/replayed.
Tensor detach(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// --- convolution on single images laid out [C, H, W] ---
// weight [O, C, k, k], bias [O]; zero padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding);
// weight [C, O, k, k], bias [O]; no padding, output (H-1)*stride + k.
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride);

// Bilinear crop-and-resize with one sample per output cell. The box is in
// input-image pixels and is mapped onto the feature grid with
// `spatial_scale`; cell (i, j) samples the feature map at
// (y0 + (i + 0.5) * h / out_h) * scale - 0.5 (likewise x), clamped to the grid.
struct RoiBox {
    double x0, y0, x1, y1;
};
Tensor roi_align(const Tensor& fmap, const RoiBox& box, double spatial_scale, int out_h, int out_w);

// --- losses ---
// Pixel-mean binary cross entropy; probabilities clamped to [eps, 1 - eps].
inline constexpr double kBceClamp = 1e-7;
Tensor bce_mean(const Tensor& probs, std::span<const double> targets);
// -log p[label] with the same clamp.
Tensor cross_entropy(const Tensor& probs, int label);
Tensor mse_mean(const Tensor& a, const Tensor& b);
Tensor mse_mean(const Tensor& a, std::span<const double> target);

} // namespace shapeformer::nn

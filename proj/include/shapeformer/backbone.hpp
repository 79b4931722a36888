#pragma once

#include "shapeformer/config.hpp"
#include "shapeformer/mask.hpp"
#include "shapeformer/nn/layers.hpp"
#include "shapeformer/synth.hpp"

namespace shapeformer {

inline constexpr int kBackboneStride = 4;

// Grayscale scene as a [1, H, W] constant with values in [0, 1].
nn::Tensor image_tensor(const SceneRecord& scene);

// conv3x3/2 -> conv3x3 -> conv3x3/2 -> conv3x3, ReLU between, none after the
// last layer. Output [C_e, H/4, W/4].
class Backbone {
public:
    Backbone() = default;
    Backbone(nn::ParameterSet& ps, const ModelOptions& opts, const std::string& name = "backbone");

    // Throws ShapeError if the image is not [1, image_size, image_size].
    nn::Tensor operator()(const nn::Tensor& image) const;

    nn::Conv2d conv0, conv1, conv2, conv3;
    int image_size = 0;
};

struct RoIFeature {
    nn::Tensor tensor;  // [C_e, H_r, W_r]
    Box box;
    int category_gt = -1;
};

// Bilinear single-sample crop of the box footprint on a stride-4 feature map.
// Throws BoxOutOfBounds if the box leaves the image.
RoIFeature roi_extract(const nn::Tensor& fmap, const Box& box, int roi_size, int image_h,
                       int image_w, int stride = kBackboneStride);

} // namespace shapeformer

#include "shapeformer/backbone.hpp"

#include "shapeformer/errors.hpp"

namespace shapeformer {

using namespace nn;

Tensor image_tensor(const SceneRecord& scene) {
    std::vector<double> v(scene.image.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = scene.image[i] / 255.0;
    return Tensor::constant({1, scene.height, scene.width}, std::move(v));
}

Backbone::Backbone(ParameterSet& ps, const ModelOptions& opts, const std::string& name)
    : image_size(opts.image_size) {
    const int c = opts.embed_dim;
    const int half = std::max(1, c / 2);
    conv0 = Conv2d(ps, name + ".conv0", 1, half, 3, 2, 1);
    conv1 = Conv2d(ps, name + ".conv1", half, half, 3, 1, 1);
    conv2 = Conv2d(ps, name + ".conv2", half, c, 3, 2, 1);
    conv3 = Conv2d(ps, name + ".conv3", c, c, 3, 1, 1);
}

Tensor Backbone::operator()(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != 1 || image.dim(1) != image_size || image.dim(2) != image_size) {
        throw ShapeError("backbone expects [1, " + std::to_string(image_size) + ", " +
                         std::to_string(image_size) + "], got " + shape_str(image.shape()));
    }
    Tensor x = relu(conv0(image));
    x = relu(conv1(x));
    x = relu(conv2(x));
    return conv3(x);
}

RoIFeature roi_extract(const Tensor& fmap, const Box& box, int roi_size, int image_h, int image_w,
                       int stride) {
    if (!box.valid_in(image_w, image_h)) throw BoxOutOfBounds("RoI box outside the image");
    RoIFeature out;
    out.box = box;
    out.tensor = roi_align(fmap, {static_cast<double>(box.x0), static_cast<double>(box.y0),
                                  static_cast<double>(box.x1), static_cast<double>(box.y1)},
                           1.0 / stride, roi_size, roi_size);
    return out;
}

} // namespace shapeformer

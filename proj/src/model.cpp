#include "shapeformer/model.hpp"

#include <cmath>

#include "shapeformer/errors.hpp"

namespace shapeformer {

using namespace nn;

ShapeFormer::ShapeFormer(const ModelOptions& opts, std::uint64_t seed,
                         std::shared_ptr<const CatSpRetriever> retriever)
    : opts_(opts), params_(seed), retriever_(std::move(retriever)) {
    backbone_ = Backbone(params_, opts_);
    vis_ = VisOccHead(params_, opts_, opts_.bidirectional);
    if (!opts_.bidirectional) spa_ = SpaHead(params_, opts_);
    if (!opts_.bidirectional && opts_.use_retriever) {
        if (!retriever_) throw ConfigError("this configuration needs a shape-prior retriever");
        if (retriever_->options().num_categories != opts_.num_categories) {
            throw ConfigError("retriever and model disagree on the number of categories");
        }
    }
}

Tensor ShapeFormer::features(const SceneRecord& scene) const { return backbone_(image_tensor(scene)); }

RoiPrediction ShapeFormer::predict(const Tensor& fmap, const Box& box, int image_h, int image_w,
                                   const InstanceRecord* gt, bool run_amodal) const {
    RoiPrediction out;
    out.box = box;
    const RoIFeature roi = roi_extract(fmap, box, opts_.roi_size, image_h, image_w);
    out.vis = vis_(roi.tensor);
    if (opts_.bidirectional) {
        out.m_a = out.vis.m_a;
        out.m_p = out.vis.m_p;
        return out;
    }
    if (!run_amodal) return out;

    if (opts_.use_retriever) {
        const int ms = mask_size();
        BinaryMask visible;
        int category = out.vis.category;
        if (opts_.prior_from_gt) {
            if (!gt) throw ConfigError("prior_from_gt needs ground truth at prediction time");
            visible = crop_resize_mask(gt->quartet.visible, box, ms, ms);
            category = gt->category;
        } else {
            visible = threshold_mask(out.vis.m_v.values(), ms, ms, kMaskThreshold);
        }
        out.prior = retriever_->retrieve(visible, category);
        if (opts_.use_prior_mask) {
            out.bias = prior_to_bias(*out.prior, opts_.roi_size);
            out.bias.grid = frozen(std::move(out.bias.grid));
        }
    }
    const SpaOutput spa = spa_(out.vis.x_v, out.vis.x_o, roi.tensor, out.bias.grid);
    out.m_a = spa.m_a;
    out.m_p = spa.m_p;
    out.amodal_attention = spa.attention;
    return out;
}

std::vector<RoiPrediction> ShapeFormer::predict_scene(const SceneRecord& scene) const {
    NoGradGuard no_grad;
    const Tensor fmap = features(scene);
    std::vector<RoiPrediction> out;
    for (const auto& inst : scene.instances) {
        out.push_back(predict(fmap, inst.box, scene.height, scene.width, &inst));
    }
    return out;
}

LossReport& LossReport::operator+=(const LossReport& r) {
    cls += r.cls;
    v += r.v;
    o += r.o;
    a += r.a;
    p += r.p;
    total += r.total;
    return *this;
}

LossReport LossReport::scaled(double s) const {
    return {cls * s, v * s, o * s, a * s, p * s, total * s};
}

LossReport LossTensors::report() const {
    return {cls.item(), v.item(), o.item(), a.item(), p.item(), total.item()};
}

RoiTargets make_targets(const InstanceRecord& inst, int mask_size) {
    auto crop = [&](const BinaryMask& m) {
        const BinaryMask c = crop_resize_mask(m, inst.box, mask_size, mask_size);
        return std::vector<double>(c.data().begin(), c.data().end());
    };
    RoiTargets t;
    t.visible = crop(inst.quartet.visible);
    t.occluding = crop(inst.quartet.occluding);
    t.amodal = crop(inst.quartet.amodal);
    t.occluded = crop(inst.quartet.occluded);
    t.category = inst.category;
    return t;
}

LossTensors shapeformer_loss(const RoiPrediction& pred, const RoiTargets& targets, bool include_amodal) {
    LossTensors l;
    l.cls = cross_entropy(pred.vis.probs, targets.category);
    l.v = bce_mean(pred.vis.m_v, targets.visible);
    l.o = bce_mean(pred.vis.m_o, targets.occluding);
    if (include_amodal) {
        if (!pred.m_a.defined()) throw ConfigError("amodal loss requested but the amodal branch was skipped");
        l.a = bce_mean(pred.m_a, targets.amodal);
        l.p = bce_mean(pred.m_p, targets.occluded);
    } else {
        l.a = Tensor::zeros({1});
        l.p = Tensor::zeros({1});
    }
    l.total = add(add(add(l.cls, l.v), add(l.o, l.a)), l.p);
    if (!std::isfinite(l.total.item())) throw NonFiniteLoss("non-finite ShapeFormer loss");
    return l;
}

} // namespace shapeformer

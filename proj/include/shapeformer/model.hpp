#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "shapeformer/backbone.hpp"
#include "shapeformer/heads.hpp"
#include "shapeformer/retriever.hpp"

namespace shapeformer {

struct RoiPrediction {
    VisOccOutput vis;
    // Amodal and occluded soft masks [1, 4 H_r W_r]; undefined when the
    // amodal branch was skipped.
    nn::Tensor m_a, m_p;
    std::optional<ShapePrior> prior;
    AttnBias bias;  // grid empty when no bias was applied
    std::vector<double> amodal_attention;
    Box box;
};

// Backbone + vis-occ head + SPA head, with a frozen shape-prior retriever
// shared by reference. The bidirectional baseline instead runs all four
// queries through the vis-occ decoder.
class ShapeFormer {
public:
    ShapeFormer(const ModelOptions& opts, std::uint64_t seed,
                std::shared_ptr<const CatSpRetriever> retriever = nullptr);
    ShapeFormer(const ShapeFormer&) = delete;
    ShapeFormer& operator=(const ShapeFormer&) = delete;

    const ModelOptions& options() const { return opts_; }
    nn::ParameterSet& params() { return params_; }
    const nn::ParameterSet& params() const { return params_; }
    const CatSpRetriever* retriever() const { return retriever_.get(); }
    int mask_size() const { return 2 * opts_.roi_size; }

    nn::Tensor features(const SceneRecord& scene) const;
    // gt: ground truth of the instance, only read when prior_from_gt is set.
    // run_amodal=false skips the SPA head entirely.
    RoiPrediction predict(const nn::Tensor& fmap, const Box& box, int image_h, int image_w,
                          const InstanceRecord* gt = nullptr, bool run_amodal = true) const;
    std::vector<RoiPrediction> predict_scene(const SceneRecord& scene) const;

    const Backbone& backbone() const { return backbone_; }
    const VisOccHead& vis_occ() const { return vis_; }
    const SpaHead& spa() const { return spa_; }

private:
    ModelOptions opts_;
    nn::ParameterSet params_;
    Backbone backbone_;
    VisOccHead vis_;
    SpaHead spa_;
    std::shared_ptr<const CatSpRetriever> retriever_;
};

struct LossReport {
    double cls = 0, v = 0, o = 0, a = 0, p = 0, total = 0;

    LossReport& operator+=(const LossReport& r);
    LossReport scaled(double s) const;
};

struct LossTensors {
    nn::Tensor cls, v, o, a, p, total;
    LossReport report() const;
};

// Ground-truth quartet cropped to the box at the prediction resolution.
struct RoiTargets {
    std::vector<double> visible, occluding, amodal, occluded;
    int category = 0;
};
RoiTargets make_targets(const InstanceRecord& inst, int mask_size);

// Pixel-mean BCE per mask type plus CE on the class distribution, summed with
// unit weights. With include_amodal=false the amodal/occluded terms are zero
// constants. Throws NonFiniteLoss.
LossTensors shapeformer_loss(const RoiPrediction& pred, const RoiTargets& targets,
                             bool include_amodal = true);

} // namespace shapeformer

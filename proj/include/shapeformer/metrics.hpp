#pragma once

#include <array>
#include <vector>

#include <json.hpp>

#include "shapeformer/mask.hpp"

namespace shapeformer {

struct Detection {
    int image = 0;
    int category = 0;
    double score = 0.0;
    BinaryMask mask;
};

struct GroundTruth {
    int image = 0;
    int category = 0;
    BinaryMask mask;
};

// 0.50, 0.55, ..., 0.95
std::array<double, 10> iou_thresholds();
// 101 recall points 0.00, 0.01, ..., 1.00
std::array<double, 101> recall_points();

inline constexpr int kMaxDetsPerImage = 100;

// Greedy class-aware matching: detections in descending score (stable in
// input order) each take the unmatched same-image, same-category GT with the
// highest IoU >= tau (lowest GT index on ties). Returns the matched GT index
// per detection, -1 for false positives. At most kMaxDetsPerImage detections
// per image take part; the rest are ignored (-2).
std::vector<int> greedy_match(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                              double tau);

// Interpolated AP for one category from a score-ordered TP/FP sequence.
double interpolated_ap(const std::vector<bool>& tp_in_score_order, int num_gt);

// Mean over categories that have ground truth. Throws EmptySplit without GT.
double average_precision(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                         double tau);
// Recall averaged over categories and the threshold grid.
double average_recall(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts);

struct MaskTypeMetrics {
    double mean_iou = 0, ap50 = 0, ap75 = 0, ap = 0, ar100 = 0;
};

// paired_ious: IoU of each GT with the prediction made for it.
MaskTypeMetrics compute_metrics(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                                const std::vector<double>& paired_ious);

struct EvalReport {
    MaskTypeMetrics visible, amodal, occluding, occluded;
    int num_images = 0;
    int num_instances = 0;

    nlohmann::ordered_json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
};

nlohmann::ordered_json to_json(const MaskTypeMetrics& m);

} // namespace shapeformer

#include "shapeformer/metrics.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "shapeformer/errors.hpp"

namespace shapeformer {

std::array<double, 10> iou_thresholds() {
    std::array<double, 10> t{};
    for (int i = 0; i < 10; ++i) t[i] = (50 + 5 * i) / 100.0;
    return t;
}

std::array<double, 101> recall_points() {
    std::array<double, 101> r{};
    for (int i = 0; i < 101; ++i) r[i] = i / 100.0;
    return r;
}

namespace {

std::vector<int> score_order(const std::vector<Detection>& dets) {
    std::vector<int> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return dets[a].score > dets[b].score; });
    return order;
}

std::set<int> categories_with_gt(const std::vector<GroundTruth>& gts) {
    std::set<int> cats;
    for (const auto& g : gts) cats.insert(g.category);
    return cats;
}

} // namespace

std::vector<int> greedy_match(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                              double tau) {
    std::vector<int> match(dets.size(), -1);
    std::vector<bool> taken(gts.size(), false);
    std::map<int, int> per_image;
    for (int d : score_order(dets)) {
        if (++per_image[dets[d].image] > kMaxDetsPerImage) {
            match[d] = -2;
            continue;
        }
        int best = -1;
        double best_iou = tau;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (taken[g] || gts[g].image != dets[d].image || gts[g].category != dets[d].category) continue;
            const double iou = mask_iou(dets[d].mask, gts[g].mask);
            if (iou >= best_iou && (best < 0 || iou > best_iou)) {
                best = static_cast<int>(g);
                best_iou = iou;
            }
        }
        if (best >= 0) {
            match[d] = best;
            taken[best] = true;
        }
    }
    return match;
}

double interpolated_ap(const std::vector<bool>& tp, int num_gt) {
    if (num_gt <= 0) throw EmptySplit("AP needs at least one ground-truth instance");
    const std::size_t n = tp.size();
    std::vector<double> precision(n), recall(n);
    int tps = 0;
    for (std::size_t i = 0; i < n; ++i) {
        tps += tp[i] ? 1 : 0;
        precision[i] = static_cast<double>(tps) / static_cast<double>(i + 1);
        recall[i] = static_cast<double>(tps) / num_gt;
    }
    for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double sum = 0.0;
    for (double r : recall_points()) {
        const auto it = std::lower_bound(recall.begin(), recall.end(), r);
        if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
    }
    return sum / 101.0;
}

double average_precision(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                         double tau) {
    const auto cats = categories_with_gt(gts);
    if (cats.empty()) throw EmptySplit("no ground-truth instances to evaluate");
    const auto match = greedy_match(dets, gts, tau);
    const auto order = score_order(dets);
    double total = 0.0;
    for (int c : cats) {
        std::vector<bool> tp;
        for (int d : order) {
            if (dets[d].category != c || match[d] == -2) continue;
            tp.push_back(match[d] >= 0);
        }
        const int num_gt = static_cast<int>(
            std::count_if(gts.begin(), gts.end(), [c](const GroundTruth& g) { return g.category == c; }));
        total += interpolated_ap(tp, num_gt);
    }
    return total / static_cast<double>(cats.size());
}

double average_recall(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts) {
    const auto cats = categories_with_gt(gts);
    if (cats.empty()) throw EmptySplit("no ground-truth instances to evaluate");
    double total = 0.0;
    for (double tau : iou_thresholds()) {
        const auto match = greedy_match(dets, gts, tau);
        for (int c : cats) {
            int num_gt = 0, hits = 0;
            for (const auto& g : gts) num_gt += g.category == c;
            for (std::size_t d = 0; d < dets.size(); ++d) hits += dets[d].category == c && match[d] >= 0;
            total += static_cast<double>(hits) / num_gt;
        }
    }
    return total / static_cast<double>(cats.size() * iou_thresholds().size());
}

MaskTypeMetrics compute_metrics(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                                const std::vector<double>& paired_ious) {
    MaskTypeMetrics m;
    if (gts.empty()) throw EmptySplit("no ground-truth instances to evaluate");
    m.mean_iou = std::accumulate(paired_ious.begin(), paired_ious.end(), 0.0) /
                 static_cast<double>(std::max<std::size_t>(1, paired_ious.size()));
    double ap_sum = 0.0;
    for (double tau : iou_thresholds()) {
        const double ap = average_precision(dets, gts, tau);
        ap_sum += ap;
        if (tau == 0.5) m.ap50 = ap;
        if (tau == 0.75) m.ap75 = ap;
    }
    m.ap = ap_sum / 10.0;
    m.ar100 = average_recall(dets, gts);
    return m;
}

nlohmann::ordered_json to_json(const MaskTypeMetrics& m) {
    nlohmann::ordered_json j;
    j["mean_iou"] = m.mean_iou;
    j["ap50"] = m.ap50;
    j["ap75"] = m.ap75;
    j["ap"] = m.ap;
    j["ar100"] = m.ar100;
    return j;
}

nlohmann::ordered_json EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["visible"] = shapeformer::to_json(visible);
    j["amodal"] = shapeformer::to_json(amodal);
    j["occluding"] = shapeformer::to_json(occluding);
    j["occluded"] = shapeformer::to_json(occluded);
    j["num_images"] = num_images;
    j["num_instances"] = num_instances;
    return j;
}

namespace {
MaskTypeMetrics metrics_from_json(const nlohmann::json& j) {
    return {j.at("mean_iou").get<double>(), j.at("ap50").get<double>(), j.at("ap75").get<double>(),
            j.at("ap").get<double>(), j.at("ar100").get<double>()};
}
} // namespace

EvalReport EvalReport::from_json(const nlohmann::json& j) {
    try {
        EvalReport r;
        r.visible = metrics_from_json(j.at("visible"));
        r.amodal = metrics_from_json(j.at("amodal"));
        r.occluding = metrics_from_json(j.at("occluding"));
        r.occluded = metrics_from_json(j.at("occluded"));
        r.num_images = j.at("num_images").get<int>();
        r.num_instances = j.at("num_instances").get<int>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed eval report: ") + e.what());
    }
}

} // namespace shapeformer

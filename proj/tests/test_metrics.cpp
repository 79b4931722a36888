#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <numeric>
#include <set>

#include "shapeformer/errors.hpp"
#include "shapeformer/metrics.hpp"
#include "shapeformer/rng.hpp"
#include "support/metric_oracles.hpp"

using namespace shapeformer;
using namespace shapeformer::test_support;

TEST(Metrics, ThresholdAndRecallGrids) {
    const auto t = iou_thresholds();
    EXPECT_DOUBLE_EQ(t.front(), 0.5);
    EXPECT_DOUBLE_EQ(t.back(), 0.95);
    EXPECT_DOUBLE_EQ(t[5], 0.75);
    const auto r = recall_points();
    EXPECT_EQ(r.size(), 101u);
    EXPECT_DOUBLE_EQ(r[100], 1.0);
}

TEST(Metrics, InterpolatedApExamples) {
    EXPECT_DOUBLE_EQ(interpolated_ap({true}, 1), 1.0);
    EXPECT_DOUBLE_EQ(interpolated_ap({}, 3), 0.0);
    // T F T over 2 GT: recall 0.5 at precision 1, recall 1 at precision 2/3.
    EXPECT_NEAR(interpolated_ap({true, false, true}, 2), (51 * 1.0 + 50 * (2.0 / 3.0)) / 101.0, 1e-15);
    EXPECT_THROW(interpolated_ap({true}, 0), EmptySplit);
}

TEST(Metrics, InterpolatedApMatchesLongHandOracle) {
    Rng rng(1);
    for (int t = 0; t < 500; ++t) {
        const int n = rng.uniform_int(0, 12);
        std::vector<bool> tp(n);
        int hits = 0;
        for (int i = 0; i < n; ++i) hits += (tp[i] = rng.bernoulli(0.5));
        const int num_gt = hits + rng.uniform_int(1, 4) - 1 + (hits == 0);
        ASSERT_DOUBLE_EQ(interpolated_ap(tp, num_gt), oracle_ap(tp, num_gt));
    }
}

TEST(Metrics, PerfectPredictionsScoreOne) {
    std::vector<Detection> dets;
    std::vector<GroundTruth> gts;
    std::vector<double> ious;
    for (int img = 0; img < 3; ++img) {
        for (int k = 0; k < 3; ++k) {
            const auto m = rect(16, 16, k * 5, k, k * 5 + 4, k + 6);
            gts.push_back({img, k % 2, m});
            dets.push_back({img, k % 2, 0.9 - 0.1 * k, m});
            ious.push_back(mask_iou(m, m));
        }
    }
    // An empty GT predicted as empty is a perfect match too.
    gts.push_back({3, 0, BinaryMask(16, 16)});
    dets.push_back({3, 0, 0.5, BinaryMask(16, 16)});
    ious.push_back(mask_iou(gts.back().mask, dets.back().mask));
    const auto m = compute_metrics(dets, gts, ious);
    EXPECT_EQ(m.mean_iou, 1.0);
    EXPECT_EQ(m.ap50, 1.0);
    EXPECT_EQ(m.ap75, 1.0);
    EXPECT_EQ(m.ap, 1.0);
    EXPECT_EQ(m.ar100, 1.0);
}

TEST(Metrics, BelowThresholdIsFalsePositive) {
    // 4 px prediction inside a 10 px GT: IoU 0.4.
    const auto gt = rect(1, 10, 0, 0, 10, 1);
    const auto pred = rect(1, 10, 0, 0, 4, 1);
    ASSERT_DOUBLE_EQ(mask_iou(gt, pred), 0.4);
    const std::vector<Detection> dets{{0, 0, 0.9, pred}};
    const std::vector<GroundTruth> gts{{0, 0, gt}};
    EXPECT_EQ(greedy_match(dets, gts, 0.5)[0], -1);
    EXPECT_EQ(average_precision(dets, gts, 0.5), 0.0);
    EXPECT_EQ(average_recall(dets, gts), 0.0);
}

TEST(Metrics, CategoryMismatchNeverMatches) {
    const auto m = rect(4, 4, 0, 0, 2, 2);
    EXPECT_EQ(greedy_match({{0, 1, 0.9, m}}, {{0, 0, m}}, 0.5)[0], -1);
    EXPECT_EQ(greedy_match({{1, 0, 0.9, m}}, {{0, 0, m}}, 0.5)[0], -1);
}

TEST(Metrics, DuplicateDetectionIsFalsePositive) {
    // Three GTs; the best one is detected twice, one is missed.
    std::vector<GroundTruth> gts{{0, 0, rect(12, 12, 0, 0, 4, 4)},
                                 {0, 0, rect(12, 12, 6, 0, 10, 4)},
                                 {0, 0, rect(12, 12, 0, 6, 4, 10)}};
    std::vector<Detection> dets{{0, 0, 0.9, gts[0].mask}, {0, 0, 0.8, gts[0].mask}, {0, 0, 0.7, gts[1].mask}};
    const auto match = greedy_match(dets, gts, 0.5);
    EXPECT_EQ(match, (std::vector<int>{0, -1, 1}));
    // T F T over 3 GT.
    const double expect = (34 * 1.0 + 33 * (2.0 / 3.0)) / 101.0;
    EXPECT_NEAR(average_precision(dets, gts, 0.5), expect, 1e-15);
    Case c{dets, gts};
    double best = -1;
    enumerate(c, 0.5, [&](const std::vector<int>& a) { best = std::max(best, ap_of_assignment(c, a)); });
    EXPECT_DOUBLE_EQ(best, average_precision(dets, gts, 0.5));
}

TEST(Metrics, GreedyEqualsExhaustivePreferenceOracle) {
    Rng rng(7);
    for (int t = 0; t < 300; ++t) {
        const Case c = random_case(rng, false);
        for (double tau : iou_thresholds()) {
            std::vector<int> best;
            enumerate(c, tau, [&](const std::vector<int>& a) {
                if (best.empty() || coco_better(c, a, best)) best = a;
            });
            if (c.dets.empty()) best.clear();
            const auto greedy = greedy_match(c.dets, c.gts, tau);
            ASSERT_EQ(greedy, best) << "case " << t << " tau " << tau;
            ASSERT_DOUBLE_EQ(average_precision(c.dets, c.gts, tau), ap_of_assignment(c, best));
        }
    }
}

TEST(Metrics, GreedyNeverBeatsMaxApOracleAndTiesOnDisjointGts) {
    Rng rng(8);
    for (int t = 0; t < 300; ++t) {
        const bool disjoint = t % 2 == 0;
        const Case c = random_case(rng, disjoint);
        for (double tau : iou_thresholds()) {
            double best = 0;
            enumerate(c, tau, [&](const std::vector<int>& a) { best = std::max(best, ap_of_assignment(c, a)); });
            const double greedy = average_precision(c.dets, c.gts, tau);
            ASSERT_LE(greedy, best + 1e-15);
            if (disjoint) {
                ASSERT_DOUBLE_EQ(greedy, best) << "case " << t << " tau " << tau;
            }
        }
    }
}

TEST(Metrics, GreedyCanLoseToOptimalAssignment) {
    // d1 overlaps both GTs (better with g1), d2 only fits g1. Greedy gives g1
    // to d1 and leaves d2 unmatched although both could be matched.
    const auto g1 = rect(1, 10, 0, 0, 10, 1);
    const auto g2 = rect(1, 10, 3, 0, 10, 1);
    const auto d1 = rect(1, 10, 1, 0, 10, 1);   // IoU 0.9 with g1, 7/9 with g2
    const auto d2 = rect(1, 10, 0, 0, 6, 1);    // IoU 0.6 with g1, 3/10 with g2
    const std::vector<Detection> dets{{0, 0, 0.9, d1}, {0, 0, 0.8, d2}};
    const std::vector<GroundTruth> gts{{0, 0, g1}, {0, 0, g2}};
    EXPECT_EQ(greedy_match(dets, gts, 0.5), (std::vector<int>{0, -1}));
    Case c{dets, gts};
    double best = 0;
    enumerate(c, 0.5, [&](const std::vector<int>& a) { best = std::max(best, ap_of_assignment(c, a)); });
    EXPECT_DOUBLE_EQ(best, 1.0);
    EXPECT_LT(average_precision(dets, gts, 0.5), best);
}

TEST(Metrics, DuplicatingImagesLeavesScoresUnchanged) {
    Rng rng(9);
    for (int t = 0; t < 100; ++t) {
        Case c = random_case(rng, false);
        Case d = c;
        for (auto det : c.dets) {
            det.image = 1;
            d.dets.push_back(det);
        }
        for (auto gt : c.gts) {
            gt.image = 1;
            d.gts.push_back(gt);
        }
        for (double tau : iou_thresholds()) {
            ASSERT_EQ(average_precision(c.dets, c.gts, tau), average_precision(d.dets, d.gts, tau));
        }
        ASSERT_EQ(average_recall(c.dets, c.gts), average_recall(d.dets, d.gts));
    }
}

TEST(Metrics, ApOrderedAcrossThresholdsAndBounded) {
    Rng rng(10);
    for (int t = 0; t < 200; ++t) {
        const Case c = random_case(rng, false);
        std::vector<double> ious(c.gts.size(), 0.5);
        const auto m = compute_metrics(c.dets, c.gts, ious);
        EXPECT_GE(m.ap50, m.ap75);
        for (double v : {m.ap50, m.ap75, m.ap, m.ar100}) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(Metrics, DetectionCapPerImage) {
    const auto m = rect(4, 4, 0, 0, 2, 2);
    std::vector<Detection> dets;
    for (int i = 0; i <= kMaxDetsPerImage; ++i) dets.push_back({0, 0, 1.0 - i * 1e-3, m});
    dets.push_back({1, 0, 0.0, m});
    const auto match = greedy_match(dets, {{0, 0, m}, {1, 0, m}}, 0.5);
    EXPECT_EQ(match[0], 0);
    EXPECT_EQ(match[kMaxDetsPerImage], -2);
    EXPECT_EQ(match.back(), 1);
}

TEST(Metrics, EmptyGroundTruthThrows) {
    EXPECT_THROW(average_precision({}, {}, 0.5), EmptySplit);
    EXPECT_THROW(average_recall({}, {}), EmptySplit);
    EXPECT_THROW(compute_metrics({}, {}, {}), EmptySplit);
}

TEST(EvalReport, JsonRoundTripWithFixedKeyOrder) {
    EvalReport r;
    r.visible = {0.9, 0.8, 0.7, 0.6, 0.5};
    r.amodal = {0.1, 0.2, 0.3, 0.4, 0.5};
    r.occluded.ap = 0.25;
    r.num_images = 3;
    r.num_instances = 7;
    const auto j = r.to_json();
    std::vector<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
    EXPECT_EQ(keys, (std::vector<std::string>{"visible", "amodal", "occluding", "occluded", "num_images",
                                              "num_instances"}));
    const auto back = EvalReport::from_json(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(back.to_json().dump(), j.dump());
    EXPECT_THROW(EvalReport::from_json(nlohmann::json::parse("{\"visible\":1}")), ParseError);
}

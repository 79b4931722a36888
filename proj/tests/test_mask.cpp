#include <gtest/gtest.h>

#include "shapeformer/errors.hpp"
#include "shapeformer/mask.hpp"
#include "shapeformer/rng.hpp"

using namespace shapeformer;

namespace {

BinaryMask make(int h, int w, std::vector<std::uint8_t> v) { return BinaryMask(h, w, std::move(v)); }

BinaryMask random_mask(Rng& rng, int h, int w, double p) {
    BinaryMask m(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) m.set(y, x, rng.bernoulli(p));
    return m;
}

} // namespace

TEST(BinaryMask, RejectsBadData) {
    EXPECT_THROW(make(2, 2, {0, 1, 1}), DimensionMismatch);
    EXPECT_THROW(make(2, 2, {0, 1, 2, 1}), DimensionMismatch);
}

TEST(Rle, EncodeExamples) {
    EXPECT_EQ(rle_encode(make(2, 2, {0, 1, 1, 1})).counts, (std::vector<std::uint32_t>{1, 3}));
    EXPECT_EQ(rle_encode(BinaryMask(2, 2, 0)).counts, (std::vector<std::uint32_t>{4}));
    EXPECT_EQ(rle_encode(BinaryMask(2, 2, 1)).counts, (std::vector<std::uint32_t>{0, 4}));
}

TEST(Rle, DecodeExamples) {
    EXPECT_EQ(rle_decode({2, 2, {1, 3}}), make(2, 2, {0, 1, 1, 1}));
    EXPECT_EQ(rle_decode({2, 2, {4}}), BinaryMask(2, 2, 0));
    EXPECT_THROW(rle_decode({2, 2, {3}}), ChecksumError);
}

TEST(Rle, RoundTripRandomMasks) {
    Rng rng(1234);
    for (int t = 0; t < 1000; ++t) {
        const int h = rng.uniform_int(1, 20), w = rng.uniform_int(1, 20);
        const BinaryMask m = random_mask(rng, h, w, rng.uniform());
        const RleMask r = rle_encode(m);
        std::uint64_t total = 0;
        for (std::size_t i = 0; i < r.counts.size(); ++i) {
            total += r.counts[i];
            if (i > 0) {
                EXPECT_GT(r.counts[i], 0u);
            }
        }
        EXPECT_EQ(total, static_cast<std::uint64_t>(h) * w);
        ASSERT_EQ(rle_decode(r), m);
        ASSERT_EQ(rle_decode(rle_from_json(rle_to_json(r))), m);
    }
}

TEST(Rle, JsonLayout) {
    EXPECT_EQ(rle_to_json(rle_encode(make(2, 2, {0, 1, 1, 1}))).dump(),
              R"({"h":2,"w":2,"counts":[1,3]})");
    EXPECT_THROW(rle_from_json(nlohmann::json::parse(R"({"h":2})")), ParseError);
}

TEST(MaskIou, Examples) {
    const auto a = make(2, 2, {1, 1, 0, 0});
    const auto b = make(2, 2, {1, 0, 1, 0});
    EXPECT_DOUBLE_EQ(mask_iou(a, b), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(mask_iou(a, a), 1.0);
    EXPECT_DOUBLE_EQ(mask_iou(a, ~a), 0.0);
    EXPECT_DOUBLE_EQ(mask_iou(BinaryMask(3, 3), BinaryMask(3, 3)), 1.0);
    EXPECT_THROW(mask_iou(a, BinaryMask(3, 2)), DimensionMismatch);
}

TEST(MaskIou, SymmetricAndMonotone) {
    Rng rng(7);
    for (int t = 0; t < 300; ++t) {
        const auto a = random_mask(rng, 8, 9, 0.4);
        const auto b = random_mask(rng, 8, 9, 0.4);
        EXPECT_DOUBLE_EQ(mask_iou(a, b), mask_iou(b, a));
        EXPECT_GE(mask_iou(a, a | b), mask_iou(a, b));
    }
}

TEST(DeriveOccluded, Examples) {
    EXPECT_EQ(derive_occluded(BinaryMask(2, 2, 1), make(2, 2, {1, 0, 1, 0})), make(2, 2, {0, 1, 0, 1}));
    const auto m = make(2, 2, {1, 1, 0, 1});
    EXPECT_EQ(derive_occluded(m, m), BinaryMask(2, 2, 0));
    EXPECT_THROW(derive_occluded(make(2, 2, {1, 1, 0, 0}), make(2, 2, {0, 0, 1, 0})), ContainmentError);
}

TEST(DeriveOccluded, QuartetConsistency) {
    Rng rng(99);
    for (int t = 0; t < 200; ++t) {
        const auto amodal = random_mask(rng, 6, 7, 0.6);
        const auto visible = amodal & random_mask(rng, 6, 7, 0.5);
        const auto occluded = derive_occluded(amodal, visible);
        EXPECT_FALSE((visible & occluded).any());
        EXPECT_EQ(visible | occluded, amodal);
    }
}

TEST(CropResize, Identity) {
    Rng rng(3);
    const auto m = random_mask(rng, 5, 7, 0.5);
    EXPECT_EQ(crop_resize_mask(m, {0, 0, 7, 5}, 5, 7), m);
}

TEST(CropResize, CheckerboardDownsample) {
    BinaryMask board(4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) board.set(y, x, (x + y) % 2 == 0);
    // Sample rows/cols floor((i + 0.5) * 4 / 2) = {1, 3}; (1,1),(1,3),(3,1),(3,3) are all "even".
    EXPECT_EQ(crop_resize_mask(board, {0, 0, 4, 4}, 2, 2), BinaryMask(2, 2, 1));
}

TEST(CropResize, SinglePixelBox) {
    BinaryMask m(4, 4);
    m.set(2, 1, true);
    EXPECT_EQ(crop_resize_mask(m, {1, 2, 2, 3}, 3, 3), BinaryMask(3, 3, 1));
    EXPECT_EQ(crop_resize_mask(m, {0, 0, 1, 1}, 3, 3), BinaryMask(3, 3, 0));
    EXPECT_THROW(crop_resize_mask(m, {0, 0, 5, 4}, 2, 2), BoxOutOfBounds);
}

TEST(PasteMask, InverseOfCropAtSameResolution) {
    Rng rng(5);
    const auto m = random_mask(rng, 10, 10, 0.5);
    const Box box{2, 3, 8, 9};
    const auto roi = crop_resize_mask(m, box, box.height(), box.width());
    const auto pasted = paste_mask(roi, box, 10, 10);
    BinaryMask inside(10, 10);
    for (int y = box.y0; y < box.y1; ++y)
        for (int x = box.x0; x < box.x1; ++x) inside.set(y, x, true);
    EXPECT_EQ(pasted, m & inside);
}

TEST(ThresholdMask, InclusiveAtHalf) {
    const std::vector<double> v{0.2, 0.5, 0.49, 0.9};
    EXPECT_EQ(threshold_mask(v, 2, 2), make(2, 2, {0, 1, 0, 1}));
}

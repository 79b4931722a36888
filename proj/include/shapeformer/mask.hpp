#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace shapeformer {

// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct Box {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    bool valid_in(int image_w, int image_h) const {
        return 0 <= x0 && x0 < x1 && x1 <= image_w && 0 <= y0 && y0 < y1 && y1 <= image_h;
    }
    bool operator==(const Box&) const = default;
};

// Row-major bit grid, 1 = foreground.
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int height, int width, std::uint8_t fill = 0);
    BinaryMask(int height, int width, std::vector<std::uint8_t> data);

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return data_.size(); }
    bool empty_canvas() const { return data_.empty(); }

    std::uint8_t at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    void set(int y, int x, bool v) { data_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }
    std::span<const std::uint8_t> data() const { return data_; }

    std::size_t area() const;
    bool any() const { return area() > 0; }
    // Tight bounding box of the foreground; throws DegenerateShape if empty.
    Box bounding_box() const;
    bool same_dims(const BinaryMask& other) const {
        return height_ == other.height_ && width_ == other.width_;
    }

    BinaryMask operator&(const BinaryMask& other) const;
    BinaryMask operator|(const BinaryMask& other) const;
    BinaryMask operator~() const;
    bool subset_of(const BinaryMask& other) const;

    bool operator==(const BinaryMask&) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> data_;
};

struct MaskQuartet {
    BinaryMask visible;
    BinaryMask occluding;
    BinaryMask amodal;
    BinaryMask occluded;

    // Checks shared dims, visible subset of amodal, occluded = amodal minus visible.
    bool consistent() const;
    bool operator==(const MaskQuartet&) const = default;
};

// Row-major run-length encoding; counts alternate 0-runs and 1-runs and
// always start with a (possibly empty) 0-run.
struct RleMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint32_t> counts;
    bool operator==(const RleMask&) const = default;
};

RleMask rle_encode(const BinaryMask& mask);
BinaryMask rle_decode(const RleMask& rle);

nlohmann::ordered_json rle_to_json(const RleMask& rle);
RleMask rle_from_json(const nlohmann::json& j);

// |a & b| / |a | b|; 1.0 when both are empty.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

BinaryMask derive_occluded(const BinaryMask& amodal, const BinaryMask& visible);

// Nearest-neighbour crop of `box` resampled to out_h x out_w. Output cell
// (i, j) samples source pixel (y0 + floor((i + 0.5) * h / out_h), ...).
BinaryMask crop_resize_mask(const BinaryMask& mask, const Box& box, int out_h, int out_w);

// Inverse placement: nearest-neighbour resample of a box-frame mask back into
// a canvas of the given size; pixels outside the box are 0.
BinaryMask paste_mask(const BinaryMask& roi_mask, const Box& box, int canvas_h, int canvas_w);

// Threshold soft values (row-major, h*w) at `threshold` (value >= threshold -> 1).
BinaryMask threshold_mask(std::span<const double> values, int height, int width,
                          double threshold = 0.5);

inline constexpr double kMaskThreshold = 0.5;

} // namespace shapeformer

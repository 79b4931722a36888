#include "shapeformer/mask.hpp"

#include <algorithm>
#include <numeric>

#include "shapeformer/errors.hpp"

namespace shapeformer {

BinaryMask::BinaryMask(int height, int width, std::uint8_t fill)
    : height_(height), width_(width),
      data_(static_cast<std::size_t>(height) * width, fill ? 1 : 0) {
    if (height < 0 || width < 0) throw DimensionMismatch("negative mask dimensions");
}

BinaryMask::BinaryMask(int height, int width, std::vector<std::uint8_t> data)
    : height_(height), width_(width), data_(std::move(data)) {
    if (height < 0 || width < 0 || data_.size() != static_cast<std::size_t>(height) * width) {
        throw DimensionMismatch("mask data length does not match height x width");
    }
    for (auto& v : data_) {
        if (v > 1) throw DimensionMismatch("mask values must be 0 or 1");
    }
}

std::size_t BinaryMask::area() const {
    return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

Box BinaryMask::bounding_box() const {
    Box b{width_, height_, -1, -1};
    for (int y = 0; y < height_; ++y) {
        for (int x = 0; x < width_; ++x) {
            if (!at(y, x)) continue;
            b.x0 = std::min(b.x0, x);
            b.y0 = std::min(b.y0, y);
            b.x1 = std::max(b.x1, x + 1);
            b.y1 = std::max(b.y1, y + 1);
        }
    }
    if (b.x1 < 0) throw DegenerateShape("bounding box of an empty mask");
    return b;
}

namespace {

void require_same_dims(const BinaryMask& a, const BinaryMask& b) {
    if (!a.same_dims(b)) {
        throw DimensionMismatch("mask dimensions differ: " + std::to_string(a.height()) + "x" +
                                std::to_string(a.width()) + " vs " + std::to_string(b.height()) +
                                "x" + std::to_string(b.width()));
    }
}

template <typename Op>
BinaryMask combine(const BinaryMask& a, const BinaryMask& b, Op op) {
    require_same_dims(a, b);
    std::vector<std::uint8_t> out(a.size());
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = op(da[i], db[i]) ? 1 : 0;
    return BinaryMask(a.height(), a.width(), std::move(out));
}

} // namespace

BinaryMask BinaryMask::operator&(const BinaryMask& other) const {
    return combine(*this, other, [](auto x, auto y) { return x && y; });
}

BinaryMask BinaryMask::operator|(const BinaryMask& other) const {
    return combine(*this, other, [](auto x, auto y) { return x || y; });
}

BinaryMask BinaryMask::operator~() const {
    std::vector<std::uint8_t> out(data_.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = data_[i] ? 0 : 1;
    return BinaryMask(height_, width_, std::move(out));
}

bool BinaryMask::subset_of(const BinaryMask& other) const {
    require_same_dims(*this, other);
    for (std::size_t i = 0; i < data_.size(); ++i) {
        if (data_[i] && !other.data_[i]) return false;
    }
    return true;
}

bool MaskQuartet::consistent() const {
    if (!visible.same_dims(amodal) || !occluding.same_dims(amodal) || !occluded.same_dims(amodal)) {
        return false;
    }
    if (!visible.subset_of(amodal)) return false;
    return occluded == (amodal & ~visible);
}

RleMask rle_encode(const BinaryMask& mask) {
    RleMask rle{mask.height(), mask.width(), {}};
    std::uint8_t current = 0;
    std::uint32_t run = 0;
    for (auto v : mask.data()) {
        if (v != current) {
            rle.counts.push_back(run);
            run = 0;
            current = v;
        }
        ++run;
    }
    rle.counts.push_back(run);
    return rle;
}

BinaryMask rle_decode(const RleMask& rle) {
    if (rle.height < 0 || rle.width < 0) throw ChecksumError("negative RLE dimensions");
    const std::uint64_t expected = static_cast<std::uint64_t>(rle.height) * rle.width;
    const std::uint64_t total =
        std::accumulate(rle.counts.begin(), rle.counts.end(), std::uint64_t{0});
    if (total != expected) {
        throw ChecksumError("RLE counts sum to " + std::to_string(total) + ", expected " +
                            std::to_string(expected));
    }
    std::vector<std::uint8_t> data;
    data.reserve(expected);
    std::uint8_t value = 0;
    for (auto run : rle.counts) {
        data.insert(data.end(), run, value);
        value ^= 1;
    }
    return BinaryMask(rle.height, rle.width, std::move(data));
}

nlohmann::ordered_json rle_to_json(const RleMask& rle) {
    nlohmann::ordered_json j;
    j["h"] = rle.height;
    j["w"] = rle.width;
    j["counts"] = rle.counts;
    return j;
}

RleMask rle_from_json(const nlohmann::json& j) {
    try {
        RleMask rle;
        rle.height = j.at("h").get<int>();
        rle.width = j.at("w").get<int>();
        rle.counts = j.at("counts").get<std::vector<std::uint32_t>>();
        return rle;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed RLE object: ") + e.what());
    }
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
    require_same_dims(a, b);
    std::size_t inter = 0;
    std::size_t uni = 0;
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i) {
        inter += (da[i] & db[i]);
        uni += (da[i] | db[i]);
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

BinaryMask derive_occluded(const BinaryMask& amodal, const BinaryMask& visible) {
    require_same_dims(amodal, visible);
    if (!visible.subset_of(amodal)) {
        throw ContainmentError("visible mask has pixels outside the amodal mask");
    }
    return amodal & ~visible;
}

BinaryMask crop_resize_mask(const BinaryMask& mask, const Box& box, int out_h, int out_w) {
    if (!box.valid_in(mask.width(), mask.height())) {
        throw BoxOutOfBounds("crop box outside mask bounds");
    }
    if (out_h <= 0 || out_w <= 0) throw DimensionMismatch("output size must be positive");
    BinaryMask out(out_h, out_w);
    const double sy = static_cast<double>(box.height()) / out_h;
    const double sx = static_cast<double>(box.width()) / out_w;
    for (int i = 0; i < out_h; ++i) {
        const int y = box.y0 + std::min(box.height() - 1, static_cast<int>((i + 0.5) * sy));
        for (int j = 0; j < out_w; ++j) {
            const int x = box.x0 + std::min(box.width() - 1, static_cast<int>((j + 0.5) * sx));
            out.set(i, j, mask.at(y, x));
        }
    }
    return out;
}

BinaryMask paste_mask(const BinaryMask& roi_mask, const Box& box, int canvas_h, int canvas_w) {
    if (!box.valid_in(canvas_w, canvas_h)) throw BoxOutOfBounds("paste box outside canvas");
    BinaryMask out(canvas_h, canvas_w);
    const int box_h = box.height();
    const int box_w = box.width();
    // Crop rule with the roles swapped: the RoI mask is the source.
    const Box src{0, 0, roi_mask.width(), roi_mask.height()};
    const BinaryMask full_box = crop_resize_mask(roi_mask, src, box_h, box_w);
    for (int y = 0; y < box_h; ++y) {
        for (int x = 0; x < box_w; ++x) {
            if (full_box.at(y, x)) out.set(box.y0 + y, box.x0 + x, true);
        }
    }
    return out;
}

BinaryMask threshold_mask(std::span<const double> values, int height, int width, double threshold) {
    if (values.size() != static_cast<std::size_t>(height) * width) {
        throw DimensionMismatch("soft mask length does not match height x width");
    }
    std::vector<std::uint8_t> data(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) data[i] = values[i] >= threshold ? 1 : 0;
    return BinaryMask(height, width, std::move(data));
}

} // namespace shapeformer

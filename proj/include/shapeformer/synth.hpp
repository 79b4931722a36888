#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "shapeformer/mask.hpp"
#include "shapeformer/rng.hpp"

namespace shapeformer {

enum class ShapeFamily { Rectangle, Ellipse, Triangle, LShape };

std::string to_string(ShapeFamily family);
ShapeFamily shape_family_from_string(const std::string& name);

struct GenConfig {
    int image_size = 64;
    int num_categories = 4;
    int min_instances = 2;
    int max_instances = 4;
    std::uint64_t seed = 0;
    // Family per category id; defaults cycle rectangle, ellipse, triangle, L-shape.
    std::vector<ShapeFamily> families;

    ShapeFamily family_of(int category) const;
    // Throws ConfigError when an invariant is violated.
    void validate() const;
};

nlohmann::ordered_json to_json(const GenConfig& config);
GenConfig gen_config_from_json(const nlohmann::json& j);

// Half-open pixel corners.
struct RectParams {
    int x0, y0, x1, y1;
};
struct EllipseParams {
    double cx, cy, rx, ry;
};
struct TriangleParams {
    double x[3], y[3];
};
// Rectangle with one corner notch removed; corner 0..3 = TL, TR, BR, BL.
struct LShapeParams {
    int x0, y0, x1, y1;
    int notch_w, notch_h;
    int corner;
};
using ShapeParams = std::variant<RectParams, EllipseParams, TriangleParams, LShapeParams>;

ShapeFamily family_of(const ShapeParams& params);

inline constexpr std::size_t kMinShapeArea = 16;

// Rasterises by pixel centres. Throws DegenerateShape if the result has fewer
// than kMinShapeArea pixels or is not 4-connected.
BinaryMask render_shape(const ShapeParams& params, int canvas_h, int canvas_w);
// Category-checked variant: params must belong to the category's family.
BinaryMask render_shape(const GenConfig& config, int category, const ShapeParams& params);

// Random parameters for a family, sized relative to the canvas.
ShapeParams sample_shape(ShapeFamily family, Rng& rng, int canvas_h, int canvas_w,
                         double min_frac = 0.25, double max_frac = 0.55);

struct InstanceRecord {
    Box box;
    int category = 0;
    MaskQuartet quartet;
    // Stacking rank: 0 is the back-most instance, larger values are nearer.
    int depth_order = 0;
    bool operator==(const InstanceRecord&) const = default;
};

struct SceneRecord {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> image;  // 8-bit grayscale, row-major
    std::vector<InstanceRecord> instances;
    std::uint64_t scene_seed = 0;
    bool operator==(const SceneRecord&) const = default;
};

inline constexpr double kMinVisibleFraction = 0.10;

// Depth composition of back-to-front amodal layers: visible = amodal minus
// the union of nearer amodal masks; occluding = visible parts of nearer
// overlapping instances inside this instance's box.
std::vector<MaskQuartet> compose_quartets(const std::vector<BinaryMask>& amodal);
inline constexpr int kMaxSceneAttempts = 100;

// Deterministic in (config, scene_seed).
SceneRecord generate_scene(const GenConfig& config, std::uint64_t scene_seed);

// Seed of scene `index` in a split: splitmix mix of (config.seed, split salt, index).
std::uint64_t scene_seed_for(const GenConfig& config, const std::string& split, std::size_t index);

std::vector<SceneRecord> generate_split(const GenConfig& config, const std::string& split,
                                        std::size_t count);

inline constexpr double kAugmentMinRetained = 0.20;
inline constexpr double kAugmentMaxRetained = 0.95;
inline constexpr int kAugmentAttempts = 50;

// amodal & ~occluder if the retained fraction lies in [0.20, 0.95], else nullopt.
std::optional<BinaryMask> apply_occluder(const BinaryMask& amodal, const BinaryMask& occluder);

// Simulated visible mask: pastes a random occluder from the shape families
// over the amodal mask. Falls back to the input after 50 rejected placements.
BinaryMask occlusion_augment(const BinaryMask& amodal_gt, std::uint64_t aug_seed);

} // namespace shapeformer

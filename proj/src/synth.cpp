#include "shapeformer/synth.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

#include "shapeformer/errors.hpp"

namespace shapeformer {

std::string to_string(ShapeFamily family) {
    switch (family) {
    case ShapeFamily::Rectangle: return "rectangle";
    case ShapeFamily::Ellipse: return "ellipse";
    case ShapeFamily::Triangle: return "triangle";
    case ShapeFamily::LShape: return "l-shape";
    }
    return "unknown";
}

ShapeFamily shape_family_from_string(const std::string& name) {
    if (name == "rectangle") return ShapeFamily::Rectangle;
    if (name == "ellipse") return ShapeFamily::Ellipse;
    if (name == "triangle") return ShapeFamily::Triangle;
    if (name == "l-shape") return ShapeFamily::LShape;
    throw ConfigError("unknown shape family: " + name);
}

ShapeFamily GenConfig::family_of(int category) const {
    if (category < 0 || category >= num_categories) {
        throw UnknownCategory("category " + std::to_string(category) + " outside [0, " +
                              std::to_string(num_categories) + ")");
    }
    if (!families.empty()) return families.at(static_cast<std::size_t>(category));
    return static_cast<ShapeFamily>(category % 4);
}

void GenConfig::validate() const {
    if (num_categories < 1) throw ConfigError("num_categories must be >= 1");
    if (image_size < 16) throw ConfigError("image_size must be >= 16");
    if (min_instances < 1 || max_instances < min_instances) {
        throw ConfigError("instances_per_scene range is invalid");
    }
    if (!families.empty() && families.size() != static_cast<std::size_t>(num_categories)) {
        throw ConfigError("a shape family is required for every category");
    }
}

nlohmann::ordered_json to_json(const GenConfig& config) {
    nlohmann::ordered_json j;
    j["image_size"] = config.image_size;
    j["num_categories"] = config.num_categories;
    j["min_instances"] = config.min_instances;
    j["max_instances"] = config.max_instances;
    j["seed"] = config.seed;
    auto fams = nlohmann::ordered_json::array();
    for (int c = 0; c < config.num_categories; ++c) fams.push_back(to_string(config.family_of(c)));
    j["families"] = fams;
    return j;
}

GenConfig gen_config_from_json(const nlohmann::json& j) {
    try {
        GenConfig c;
        c.image_size = j.at("image_size").get<int>();
        c.num_categories = j.at("num_categories").get<int>();
        c.min_instances = j.at("min_instances").get<int>();
        c.max_instances = j.at("max_instances").get<int>();
        c.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& f : j.at("families")) {
            c.families.push_back(shape_family_from_string(f.get<std::string>()));
        }
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed generator config: ") + e.what());
    }
}

ShapeFamily family_of(const ShapeParams& params) {
    return static_cast<ShapeFamily>(params.index());
}

namespace {

bool four_connected(const BinaryMask& m) {
    const auto total = m.area();
    if (total == 0) return false;
    const int h = m.height(), w = m.width();
    std::vector<std::uint8_t> seen(m.size(), 0);
    std::queue<std::pair<int, int>> q;
    for (int y = 0; y < h && q.empty(); ++y) {
        for (int x = 0; x < w; ++x) {
            if (m.at(y, x)) {
                q.push({y, x});
                seen[static_cast<std::size_t>(y) * w + x] = 1;
                break;
            }
        }
    }
    std::size_t reached = 0;
    constexpr int dy[4] = {-1, 1, 0, 0};
    constexpr int dx[4] = {0, 0, -1, 1};
    while (!q.empty()) {
        auto [y, x] = q.front();
        q.pop();
        ++reached;
        for (int d = 0; d < 4; ++d) {
            const int ny = y + dy[d], nx = x + dx[d];
            if (ny < 0 || ny >= h || nx < 0 || nx >= w || !m.at(ny, nx)) continue;
            auto& s = seen[static_cast<std::size_t>(ny) * w + nx];
            if (!s) {
                s = 1;
                q.push({ny, nx});
            }
        }
    }
    return reached == total;
}

double edge(double ax, double ay, double bx, double by, double px, double py) {
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

struct Rasterizer {
    int h, w;

    BinaryMask operator()(const RectParams& p) const {
        BinaryMask m(h, w);
        for (int y = std::max(0, p.y0); y < std::min(h, p.y1); ++y) {
            for (int x = std::max(0, p.x0); x < std::min(w, p.x1); ++x) m.set(y, x, true);
        }
        return m;
    }

    BinaryMask operator()(const EllipseParams& p) const {
        if (p.rx <= 0.0 || p.ry <= 0.0) throw DegenerateShape("ellipse radii must be positive");
        BinaryMask m(h, w);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double u = (x + 0.5 - p.cx) / p.rx;
                const double v = (y + 0.5 - p.cy) / p.ry;
                if (u * u + v * v <= 1.0) m.set(y, x, true);
            }
        }
        return m;
    }

    BinaryMask operator()(const TriangleParams& p) const {
        BinaryMask m(h, w);
        const double area = edge(p.x[0], p.y[0], p.x[1], p.y[1], p.x[2], p.y[2]);
        if (area == 0.0) throw DegenerateShape("collinear triangle vertices");
        const double sign = area > 0 ? 1.0 : -1.0;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double px = x + 0.5, py = y + 0.5;
                const double e0 = sign * edge(p.x[0], p.y[0], p.x[1], p.y[1], px, py);
                const double e1 = sign * edge(p.x[1], p.y[1], p.x[2], p.y[2], px, py);
                const double e2 = sign * edge(p.x[2], p.y[2], p.x[0], p.y[0], px, py);
                if (e0 >= 0 && e1 >= 0 && e2 >= 0) m.set(y, x, true);
            }
        }
        return m;
    }

    BinaryMask operator()(const LShapeParams& p) const {
        BinaryMask m = (*this)(RectParams{p.x0, p.y0, p.x1, p.y1});
        const int nx0 = (p.corner == 1 || p.corner == 2) ? p.x1 - p.notch_w : p.x0;
        const int ny0 = (p.corner == 2 || p.corner == 3) ? p.y1 - p.notch_h : p.y0;
        for (int y = std::max(0, ny0); y < std::min(h, ny0 + p.notch_h); ++y) {
            for (int x = std::max(0, nx0); x < std::min(w, nx0 + p.notch_w); ++x) m.set(y, x, false);
        }
        return m;
    }
};

} // namespace

BinaryMask render_shape(const ShapeParams& params, int canvas_h, int canvas_w) {
    BinaryMask m = std::visit(Rasterizer{canvas_h, canvas_w}, params);
    if (m.area() < kMinShapeArea) {
        throw DegenerateShape("shape area " + std::to_string(m.area()) + " below " +
                              std::to_string(kMinShapeArea) + " px");
    }
    if (!four_connected(m)) throw DegenerateShape("shape is not connected");
    return m;
}

BinaryMask render_shape(const GenConfig& config, int category, const ShapeParams& params) {
    if (config.family_of(category) != family_of(params)) {
        throw ConfigError("shape parameters do not belong to the category's family");
    }
    return render_shape(params, config.image_size, config.image_size);
}

ShapeParams sample_shape(ShapeFamily family, Rng& rng, int canvas_h, int canvas_w, double min_frac,
                         double max_frac) {
    const int bw = rng.uniform_int(std::max(2, static_cast<int>(std::lround(min_frac * canvas_w))),
                                   std::max(2, static_cast<int>(std::lround(max_frac * canvas_w))));
    const int bh = rng.uniform_int(std::max(2, static_cast<int>(std::lround(min_frac * canvas_h))),
                                   std::max(2, static_cast<int>(std::lround(max_frac * canvas_h))));
    const int x0 = rng.uniform_int(0, std::max(0, canvas_w - bw));
    const int y0 = rng.uniform_int(0, std::max(0, canvas_h - bh));
    const int x1 = std::min(canvas_w, x0 + bw);
    const int y1 = std::min(canvas_h, y0 + bh);
    switch (family) {
    case ShapeFamily::Rectangle: return RectParams{x0, y0, x1, y1};
    case ShapeFamily::Ellipse:
        return EllipseParams{(x0 + x1) / 2.0, (y0 + y1) / 2.0, (x1 - x0) / 2.0, (y1 - y0) / 2.0};
    case ShapeFamily::Triangle: {
        // Apex on one side of the box, base along the opposite side.
        const double t = rng.uniform(0.2, 0.8);
        const int side = rng.uniform_int(0, 3);
        TriangleParams p{};
        const double fx0 = x0, fy0 = y0, fx1 = x1, fy1 = y1;
        switch (side) {
        case 0: p = {{fx0 + t * (fx1 - fx0), fx0, fx1}, {fy0, fy1, fy1}}; break;
        case 1: p = {{fx0 + t * (fx1 - fx0), fx0, fx1}, {fy1, fy0, fy0}}; break;
        case 2: p = {{fx0, fx1, fx1}, {fy0 + t * (fy1 - fy0), fy0, fy1}}; break;
        default: p = {{fx1, fx0, fx0}, {fy0 + t * (fy1 - fy0), fy0, fy1}}; break;
        }
        return p;
    }
    case ShapeFamily::LShape: {
        const int nw = std::max(1, static_cast<int>(std::lround((x1 - x0) * rng.uniform(0.35, 0.6))));
        const int nh = std::max(1, static_cast<int>(std::lround((y1 - y0) * rng.uniform(0.35, 0.6))));
        return LShapeParams{x0, y0, x1, y1, nw, nh, rng.uniform_int(0, 3)};
    }
    }
    throw ConfigError("unknown shape family");
}

namespace {

struct Layer {
    int category;
    BinaryMask amodal;
};

std::uint8_t to_u8(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

} // namespace

std::vector<MaskQuartet> compose_quartets(const std::vector<BinaryMask>& amodal) {
    std::vector<MaskQuartet> out(amodal.size());
    if (amodal.empty()) return out;
    const int h = amodal[0].height(), w = amodal[0].width();
    BinaryMask nearer(h, w);
    for (std::size_t i = amodal.size(); i-- > 0;) {
        if (!amodal[i].same_dims(amodal[0])) throw DimensionMismatch("layer sizes differ");
        out[i].amodal = amodal[i];
        out[i].visible = amodal[i] & ~nearer;
        out[i].occluded = derive_occluded(amodal[i], out[i].visible);
        nearer = nearer | amodal[i];
    }
    for (std::size_t i = 0; i < amodal.size(); ++i) {
        BinaryMask occluding(h, w);
        for (std::size_t j = i + 1; j < amodal.size(); ++j) {
            if ((amodal[j] & amodal[i]).any()) occluding = occluding | out[j].visible;
        }
        if (amodal[i].any()) {
            const Box b = amodal[i].bounding_box();
            BinaryMask box_region(h, w);
            for (int y = b.y0; y < b.y1; ++y)
                for (int x = b.x0; x < b.x1; ++x) box_region.set(y, x, true);
            occluding = occluding & box_region;
        } else {
            occluding = BinaryMask(h, w);
        }
        out[i].occluding = std::move(occluding);
    }
    return out;
}

SceneRecord generate_scene(const GenConfig& config, std::uint64_t scene_seed) {
    config.validate();
    const int size = config.image_size;
    Rng rng(scene_seed);

    for (int attempt = 0; attempt < kMaxSceneAttempts; ++attempt) {
        const int n = rng.uniform_int(config.min_instances, config.max_instances);
        std::vector<Layer> layers;
        bool ok = true;
        for (int i = 0; i < n && ok; ++i) {
            const int category = rng.uniform_int(0, config.num_categories - 1);
            const auto params = sample_shape(config.family_of(category), rng, size, size);
            try {
                layers.push_back({category, render_shape(params, size, size)});
            } catch (const DegenerateShape&) {
                ok = false;
            }
        }
        if (!ok) continue;

        std::vector<BinaryMask> amodal;
        for (const auto& l : layers) amodal.push_back(l.amodal);
        auto quartets = compose_quartets(amodal);
        for (std::size_t i = 0; i < layers.size() && ok; ++i) {
            const double frac = static_cast<double>(quartets[i].visible.area()) /
                                static_cast<double>(layers[i].amodal.area());
            ok = quartets[i].visible.any() && frac >= kMinVisibleFraction;
        }
        if (!ok) continue;

        SceneRecord scene;
        scene.height = size;
        scene.width = size;
        scene.scene_seed = scene_seed;
        std::vector<BinaryMask> visible;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            InstanceRecord inst;
            inst.category = layers[i].category;
            inst.depth_order = static_cast<int>(i);
            inst.box = layers[i].amodal.bounding_box();
            visible.push_back(quartets[i].visible);
            inst.quartet = std::move(quartets[i]);
            scene.instances.push_back(std::move(inst));
        }

        // Per-category tone with a per-instance offset, plus pixel noise.
        const double span = config.num_categories > 1 ? 160.0 / (config.num_categories - 1) : 0.0;
        std::vector<double> tone(layers.size());
        for (std::size_t i = 0; i < layers.size(); ++i) {
            tone[i] = 80.0 + span * layers[i].category + rng.uniform(-12.0, 12.0);
        }
        scene.image.resize(static_cast<std::size_t>(size) * size);
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                double v = 30.0;
                for (std::size_t i = 0; i < layers.size(); ++i) {
                    if (visible[i].at(y, x)) v = tone[i];
                }
                scene.image[static_cast<std::size_t>(y) * size + x] = to_u8(v + 6.0 * rng.normal());
            }
        }
        return scene;
    }
    throw GenerationExhausted("no valid scene after " + std::to_string(kMaxSceneAttempts) +
                              " attempts (seed " + std::to_string(scene_seed) + ")");
}

std::uint64_t scene_seed_for(const GenConfig& config, const std::string& split, std::size_t index) {
    return mix_seed(config.seed ^ fnv1a(split), index);
}

std::vector<SceneRecord> generate_split(const GenConfig& config, const std::string& split,
                                        std::size_t count) {
    std::vector<SceneRecord> scenes;
    scenes.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        scenes.push_back(generate_scene(config, scene_seed_for(config, split, i)));
    }
    return scenes;
}

std::optional<BinaryMask> apply_occluder(const BinaryMask& amodal, const BinaryMask& occluder) {
    const auto total = amodal.area();
    if (total == 0) return std::nullopt;
    BinaryMask visible = amodal & ~occluder;
    const double retained = static_cast<double>(visible.area()) / static_cast<double>(total);
    if (retained < kAugmentMinRetained || retained > kAugmentMaxRetained) return std::nullopt;
    return visible;
}

BinaryMask occlusion_augment(const BinaryMask& amodal_gt, std::uint64_t aug_seed) {
    if (!amodal_gt.any()) throw DegenerateShape("occlusion_augment needs a non-empty amodal mask");
    Rng rng(aug_seed);
    const int h = amodal_gt.height(), w = amodal_gt.width();
    for (int attempt = 0; attempt < kAugmentAttempts; ++attempt) {
        const auto family = static_cast<ShapeFamily>(rng.uniform_int(0, 3));
        const auto params = sample_shape(family, rng, h, w, 0.3, 0.8);
        BinaryMask occluder = std::visit(Rasterizer{h, w}, params);
        if (auto visible = apply_occluder(amodal_gt, occluder)) return *visible;
    }
    return amodal_gt;
}

} // namespace shapeformer

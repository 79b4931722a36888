#include "shapeformer/dataset.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "shapeformer/errors.hpp"

namespace shapeformer {

namespace fs = std::filesystem;

std::size_t DatasetManifest::scene_count() const {
    std::size_t n = 0;
    for (const auto& [_, files] : splits) n += files.size();
    return n;
}

namespace {
constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
} // namespace

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += kAlphabet[v & 63];
    }
    if (i < bytes.size()) {
        std::uint32_t v = bytes[i] << 16;
        if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8;
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    std::array<int, 256> lut;
    lut.fill(-1);
    for (int i = 0; i < 64; ++i) lut[static_cast<unsigned char>(kAlphabet[i])] = i;
    if (text.size() % 4 != 0) throw ParseError("base64 length is not a multiple of 4");
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        std::uint32_t v = 0;
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = text[i + k];
            if (c == '=') {
                ++pad;
                v <<= 6;
                continue;
            }
            const int d = lut[static_cast<unsigned char>(c)];
            if (d < 0 || pad) throw ParseError("invalid base64 character");
            v = (v << 6) | static_cast<std::uint32_t>(d);
        }
        if (pad > 2 || (pad && i + 4 != text.size())) throw ParseError("invalid base64 padding");
        out.push_back(static_cast<std::uint8_t>(v >> 16));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>(v >> 8));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(v));
    }
    return out;
}

nlohmann::ordered_json scene_to_json(const SceneRecord& scene) {
    nlohmann::ordered_json j;
    j["scene_seed"] = scene.scene_seed;
    j["image"] = {{"h", scene.height}, {"w", scene.width}, {"channels", 1},
                  {"data", base64_encode(scene.image)}};
    auto instances = nlohmann::ordered_json::array();
    for (const auto& inst : scene.instances) {
        nlohmann::ordered_json ij;
        ij["box"] = {inst.box.x0, inst.box.y0, inst.box.x1, inst.box.y1};
        ij["category"] = inst.category;
        ij["depth_order"] = inst.depth_order;
        ij["visible"] = rle_to_json(rle_encode(inst.quartet.visible));
        ij["occluding"] = rle_to_json(rle_encode(inst.quartet.occluding));
        ij["amodal"] = rle_to_json(rle_encode(inst.quartet.amodal));
        ij["occluded"] = rle_to_json(rle_encode(inst.quartet.occluded));
        instances.push_back(std::move(ij));
    }
    j["instances"] = std::move(instances);
    return j;
}

SceneRecord scene_from_json(const nlohmann::json& j) {
    try {
        SceneRecord scene;
        scene.scene_seed = j.at("scene_seed").get<std::uint64_t>();
        const auto& img = j.at("image");
        scene.height = img.at("h").get<int>();
        scene.width = img.at("w").get<int>();
        if (img.at("channels").get<int>() != 1) throw ParseError("only 1-channel images are supported");
        scene.image = base64_decode(img.at("data").get<std::string>());
        if (scene.image.size() != static_cast<std::size_t>(scene.height) * scene.width) {
            throw ParseError("image byte count does not match h x w");
        }
        for (const auto& ij : j.at("instances")) {
            InstanceRecord inst;
            const auto box = ij.at("box").get<std::vector<int>>();
            if (box.size() != 4) throw ParseError("box needs four coordinates");
            inst.box = {box[0], box[1], box[2], box[3]};
            if (!inst.box.valid_in(scene.width, scene.height)) throw ParseError("box outside image");
            inst.category = ij.at("category").get<int>();
            inst.depth_order = ij.at("depth_order").get<int>();
            inst.quartet.visible = rle_decode(rle_from_json(ij.at("visible")));
            inst.quartet.occluding = rle_decode(rle_from_json(ij.at("occluding")));
            inst.quartet.amodal = rle_decode(rle_from_json(ij.at("amodal")));
            inst.quartet.occluded = rle_decode(rle_from_json(ij.at("occluded")));
            if (!inst.quartet.consistent()) throw ParseError("inconsistent mask quartet");
            scene.instances.push_back(std::move(inst));
        }
        return scene;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed scene: ") + e.what());
    } catch (const ChecksumError& e) {
        throw ParseError(std::string("corrupt RLE in scene: ") + e.what());
    }
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write " + path.string());
    out << text;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

DatasetManifest write_dataset(const std::map<std::string, std::vector<SceneRecord>>& splits,
                              const GenConfig& config, const fs::path& dir) {
    fs::create_directories(dir);
    DatasetManifest manifest;
    manifest.config = config;
    for (const auto& [split, scenes] : splits) {
        fs::create_directories(dir / split);
        auto& files = manifest.splits[split];
        for (std::size_t i = 0; i < scenes.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "scene_%06zu.json", i);
            const std::string rel = split + "/" + name;
            write_text(dir / rel, scene_to_json(scenes[i]).dump() + "\n");
            files.push_back(rel);
        }
    }
    nlohmann::ordered_json j;
    j["format_version"] = manifest.format_version;
    j["config"] = to_json(config);
    nlohmann::ordered_json sj = nlohmann::ordered_json::object();
    for (const auto& [split, files] : manifest.splits) sj[split] = files;
    j["splits"] = std::move(sj);
    write_text(dir / "manifest.json", j.dump(2) + "\n");
    return manifest;
}

DatasetManifest read_manifest(const fs::path& manifest_path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("manifest is not valid JSON: " + std::string(e.what()));
    }
    DatasetManifest manifest;
    try {
        manifest.format_version = j.at("format_version").get<int>();
        if (manifest.format_version != kDatasetFormatVersion) {
            throw FormatVersionMismatch("dataset format version " +
                                        std::to_string(manifest.format_version) + ", expected " +
                                        std::to_string(kDatasetFormatVersion));
        }
        manifest.config = gen_config_from_json(j.at("config"));
        for (const auto& [split, files] : j.at("splits").items()) {
            manifest.splits[split] = files.get<std::vector<std::string>>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("malformed manifest: " + std::string(e.what()));
    }
    const fs::path root = manifest_path.parent_path();
    for (const auto& [split, files] : manifest.splits) {
        for (const auto& f : files) {
            if (!fs::exists(root / f)) throw ParseError("manifest references missing file " + f);
        }
    }
    return manifest;
}

std::vector<SceneRecord> read_dataset(const fs::path& manifest_path, const std::string& split) {
    const auto manifest = read_manifest(manifest_path);
    auto it = manifest.splits.find(split);
    if (it == manifest.splits.end()) throw ParseError("manifest has no split named " + split);
    std::vector<SceneRecord> scenes;
    scenes.reserve(it->second.size());
    const fs::path root = manifest_path.parent_path();
    for (const auto& f : it->second) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_text(root / f));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(f + " is not valid JSON: " + e.what());
        }
        scenes.push_back(scene_from_json(j));
    }
    return scenes;
}

fs::path resolve_manifest(const fs::path& data) {
    if (fs::is_directory(data)) return data / "manifest.json";
    return data;
}

} // namespace shapeformer

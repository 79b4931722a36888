#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "shapeformer/synth.hpp"

namespace shapeformer {

inline constexpr int kDatasetFormatVersion = 1;

// manifest.json: {"format_version", "config", "splits": {name: [relative scene paths]}}
struct DatasetManifest {
    int format_version = kDatasetFormatVersion;
    GenConfig config;
    std::map<std::string, std::vector<std::string>> splits;

    std::size_t scene_count() const;
};

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

nlohmann::ordered_json scene_to_json(const SceneRecord& scene);
SceneRecord scene_from_json(const nlohmann::json& j);

// Writes <dir>/manifest.json and <dir>/<split>/scene_NNNNNN.json. Output
// bytes depend only on the inputs.
DatasetManifest write_dataset(const std::map<std::string, std::vector<SceneRecord>>& splits,
                              const GenConfig& config, const std::filesystem::path& dir);

DatasetManifest read_manifest(const std::filesystem::path& manifest_path);
// Loads one split in manifest order. Throws ParseError for missing or
// malformed files, FormatVersionMismatch for an unknown version.
std::vector<SceneRecord> read_dataset(const std::filesystem::path& manifest_path,
                                      const std::string& split);

// Accepts either a dataset directory or a manifest file path.
std::filesystem::path resolve_manifest(const std::filesystem::path& data);

} // namespace shapeformer

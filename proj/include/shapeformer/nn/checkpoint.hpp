#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "shapeformer/nn/layers.hpp"

namespace shapeformer::nn {

// Binary layout (all integers little-endian u32):
//   "SFCK" | version | entry count
//   per entry: name length | name bytes | rank | dims... | float32 payload
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
    Shape shape;
    std::vector<float> values;
};

using CheckpointMap = std::map<std::string, CheckpointEntry>;

void write_checkpoint(std::ostream& out, const ParameterSet& params);
CheckpointMap read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params);
CheckpointMap load_checkpoint_file(const std::filesystem::path& path);

// Copies entries into matching parameters. Every parameter under `prefix`
// must be present with an identical shape (ParseError otherwise).
void assign_checkpoint(const CheckpointMap& entries, ParameterSet& params,
                       const std::string& prefix = "");

// Little-endian primitives shared with other binary formats.
void write_u32(std::ostream& out, std::uint32_t v);
std::uint32_t read_u32(std::istream& in);
void write_f32(std::ostream& out, float v);
float read_f32(std::istream& in);

} // namespace shapeformer::nn

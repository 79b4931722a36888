#include "shapeformer/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "shapeformer/errors.hpp"

namespace shapeformer::nn {

namespace {
constexpr char kMagic[4] = {'S', 'F', 'C', 'K'};
constexpr std::uint32_t kMaxNameLength = 4096;
constexpr std::uint32_t kMaxRank = 8;
} // namespace

void write_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw ParseError("truncated binary stream");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& out, float v) { write_u32(out, std::bit_cast<std::uint32_t>(v)); }

float read_f32(std::istream& in) { return std::bit_cast<float>(read_u32(in)); }

void write_checkpoint(std::ostream& out, const ParameterSet& params) {
    out.write(kMagic, 4);
    write_u32(out, kCheckpointVersion);
    write_u32(out, static_cast<std::uint32_t>(params.items().size()));
    for (const auto& p : params.items()) {
        write_u32(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_u32(out, static_cast<std::uint32_t>(p.tensor.rank()));
        for (int d : p.tensor.shape()) write_u32(out, static_cast<std::uint32_t>(d));
        for (double v : p.tensor.values()) write_f32(out, static_cast<float>(v));
    }
}

CheckpointMap read_checkpoint(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw ParseError("not a checkpoint stream (bad magic)");
    }
    const auto version = read_u32(in);
    if (version != kCheckpointVersion) {
        throw FormatVersionMismatch("checkpoint version " + std::to_string(version) +
                                    ", expected " + std::to_string(kCheckpointVersion));
    }
    CheckpointMap entries;
    const auto count = read_u32(in);
    for (std::uint32_t e = 0; e < count; ++e) {
        const auto len = read_u32(in);
        if (len > kMaxNameLength) throw ParseError("checkpoint entry name too long");
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw ParseError("truncated checkpoint entry name");
        const auto rank = read_u32(in);
        if (rank > kMaxRank) throw ParseError("checkpoint entry rank too large");
        CheckpointEntry entry;
        for (std::uint32_t r = 0; r < rank; ++r) entry.shape.push_back(static_cast<int>(read_u32(in)));
        const auto n = shape_numel(entry.shape);
        entry.values.resize(n);
        for (auto& v : entry.values) v = read_f32(in);
        entries.emplace(std::move(name), std::move(entry));
    }
    return entries;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw ParseError("cannot open " + tmp + " for writing");
        write_checkpoint(out, params);
        if (!out) throw ParseError("failed writing " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

CheckpointMap load_checkpoint_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open checkpoint " + path.string());
    return read_checkpoint(in);
}

void assign_checkpoint(const CheckpointMap& entries, ParameterSet& params, const std::string& prefix) {
    for (auto& p : params.items()) {
        if (!p.name.starts_with(prefix)) continue;
        auto it = entries.find(p.name);
        if (it == entries.end()) throw ParseError("checkpoint is missing parameter " + p.name);
        if (it->second.shape != p.tensor.shape()) {
            throw ParseError("checkpoint shape mismatch for " + p.name + ": " +
                             shape_str(it->second.shape) + " vs " + shape_str(p.tensor.shape()));
        }
        auto dst = p.tensor.mutable_values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = it->second.values[i];
    }
}

} // namespace shapeformer::nn

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

namespace shapeformer::cli {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

struct RunManifest {
    std::string command;
    std::vector<std::string> args;
    std::string config_echo;
    std::uint64_t seed = 0;
    std::string version = kVersion;
    std::string started_at, finished_at;  // ISO 8601, UTC
    std::vector<std::string> outputs;     // relative to the manifest's directory

    nlohmann::ordered_json to_json() const;
};

// Drops outputs that do not exist, then writes via a temporary file and rename.
void write_run_manifest(const std::filesystem::path& path, RunManifest manifest);

// Precedence: flag, then SHAPEFORMER_SEED, then the config value.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t config_seed);

// args excludes the program name. Usage problems return 2, runtime failures 1;
// both print a one-line JSON error object to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace shapeformer::cli

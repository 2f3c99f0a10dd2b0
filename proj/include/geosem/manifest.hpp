#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace geosem {

inline constexpr const char* kToolVersion = "0.1.0";

// FNV-1a over the raw file bytes, hex encoded.
std::string file_digest_hex(const std::string& path);

// One manifest per CLI run; everything needed to reproduce it.
struct RunManifest {
    std::string subcommand;
    std::string tool_version = kToolVersion;
    std::string resolved_config_json;  // full config document, "{}" if none
    std::string config_hash;           // matches the checkpoint's when present
    std::vector<std::uint64_t> seeds;
    std::vector<std::pair<std::string, std::string>> input_digests;
    std::vector<std::string> output_paths;
    double duration_seconds = 0.0;
};

void write_run_manifest(const std::string& path, const RunManifest& manifest);

}  // namespace geosem

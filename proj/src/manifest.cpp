#include "geosem/manifest.hpp"

#include <fstream>
#include <vector>

#include "json.hpp"

#include "geosem/common.hpp"

namespace geosem {

std::string file_digest_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open '" + path + "' for digest");
    }
    std::uint64_t state = 0xcbf29ce484222325ull;
    std::vector<char> buffer(1 << 16);
    while (in) {
        in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
        std::streamsize got = in.gcount();
        if (got > 0) {
            state = fnv1a64_bytes(buffer.data(), static_cast<std::size_t>(got), state);
        }
    }
    return hex64(state);
}

void write_run_manifest(const std::string& path, const RunManifest& manifest) {
    nlohmann::json inputs = nlohmann::json::array();
    for (const auto& [file, digest] : manifest.input_digests) {
        inputs.push_back({{"path", file}, {"digest", digest}});
    }
    nlohmann::json config;
    try {
        config = nlohmann::json::parse(manifest.resolved_config_json.empty()
                                           ? "{}"
                                           : manifest.resolved_config_json);
    } catch (const nlohmann::json::exception&) {
        config = manifest.resolved_config_json;  // keep as opaque string
    }
    nlohmann::json object{{"subcommand", manifest.subcommand},
                          {"tool_version", manifest.tool_version},
                          {"config", config},
                          {"config_hash", manifest.config_hash},
                          {"seeds", manifest.seeds},
                          {"inputs", inputs},
                          {"outputs", manifest.output_paths},
                          {"duration_seconds", manifest.duration_seconds}};
    write_text_file(path, object.dump(2) + "\n");
}

}  // namespace geosem

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace trtlab {

inline constexpr const char * kToolVersion = "0.1.0";
inline constexpr int kManifestSchemaVersion = 1;
inline constexpr const char * kManifestName = "run_manifest.json";

// Record of one command invocation: what ran, with which configs and seeds,
// and which files it produced. Replaying the stored argv with the same tool
// version reproduces every listed artifact byte for byte; the manifest itself
// is excluded from that guarantee because it embeds the wall time.
struct RunManifest {
    std::string command;
    std::vector<std::string> argv; // full argument list, program name omitted
    std::map<std::string, std::string> config_hashes;
    std::map<std::string, uint64_t> seeds;
    std::vector<std::string> artifacts;
    std::string tool_version = kToolVersion;
    double wall_seconds = 0.0;
};

void write_manifest(const RunManifest & manifest, const std::string & path);
RunManifest read_manifest(const std::string & path);

// Lowercase hex rendering of an fnv1a fingerprint, for config_hashes values.
std::string hex_fingerprint(uint64_t h);

} // namespace trtlab

#include "trtlab/manifest.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "trtlab/errors.hpp"

namespace trtlab {

using nlohmann::json;

std::string hex_fingerprint(uint64_t h)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_manifest(const RunManifest & manifest, const std::string & path)
{
    json j;
    j["schema_version"] = kManifestSchemaVersion;
    j["command"] = manifest.command;
    j["argv"] = manifest.argv;
    j["config_hashes"] = manifest.config_hashes;
    j["seeds"] = manifest.seeds;
    j["artifacts"] = manifest.artifacts;
    j["tool_version"] = manifest.tool_version;
    j["wall_seconds"] = manifest.wall_seconds;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write manifest " + path);
    out << j.dump(2) << "\n";
    if (!out) throw DataError("failed writing manifest " + path);
}

RunManifest read_manifest(const std::string & path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open manifest " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception & e) {
        throw ParseError(path + ": " + e.what(), 0);
    }
    try {
        if (j.at("schema_version").get<int>() != kManifestSchemaVersion)
            throw SchemaMismatch("unsupported manifest schema_version in " + path);
        RunManifest m;
        m.command = j.at("command").get<std::string>();
        m.argv = j.at("argv").get<std::vector<std::string>>();
        m.config_hashes = j.at("config_hashes").get<std::map<std::string, std::string>>();
        m.seeds = j.at("seeds").get<std::map<std::string, uint64_t>>();
        m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
        m.tool_version = j.at("tool_version").get<std::string>();
        m.wall_seconds = j.at("wall_seconds").get<double>();
        return m;
    } catch (const json::exception & e) {
        throw SchemaMismatch(path + ": " + e.what());
    }
}

} // namespace trtlab

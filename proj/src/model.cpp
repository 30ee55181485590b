#include "trtlab/model.hpp"

#include <cstdio>
#include <cstring>
#include <memory>

#include <json.hpp>

namespace trtlab {

using nlohmann::json;

namespace {

struct FileCloser {
    void operator()(FILE * f) const {
        if (f) fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

void put_u32(FILE * f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    fwrite(b, 1, 4, f);
}

uint32_t get_u32(FILE * f, const std::string & path) {
    unsigned char b[4];
    if (fread(b, 1, 4, f) != 4) throw DataError("truncated checkpoint: " + path);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

json config_to_json(const ModelConfig & c) {
    return json{{"vocab", c.vocab},
                {"layers", c.layers},
                {"width", c.width},
                {"heads", c.heads},
                {"ffn", c.ffn},
                {"context", c.context},
                {"image_tokens", c.image_tokens},
                {"image_features", c.image_features},
                {"target_dim", c.target_dim},
                {"head_tied", c.head_tied},
                {"depth_loss_layer", c.depth_loss_layer}};
}

ModelConfig config_from_json(const json & j) {
    ModelConfig c;
    c.vocab = j.at("vocab").get<int>();
    c.layers = j.at("layers").get<int>();
    c.width = j.at("width").get<int>();
    c.heads = j.at("heads").get<int>();
    c.ffn = j.at("ffn").get<int>();
    c.context = j.at("context").get<int>();
    c.image_tokens = j.at("image_tokens").get<int>();
    c.image_features = j.at("image_features").get<int>();
    c.target_dim = j.at("target_dim").get<int>();
    c.head_tied = j.at("head_tied").get<bool>();
    c.depth_loss_layer = j.at("depth_loss_layer").get<int>();
    return c;
}

} // namespace

void save_checkpoint(const std::string & path, const Model & m) {
    FilePtr f(fopen(path.c_str(), "wb"));
    if (!f) throw DataError("cannot open for write: " + path);
    fwrite("TRTM", 1, 4, f.get());
    put_u32(f.get(), kCheckpointVersion);
    std::string cfg = config_to_json(m.cfg).dump();
    put_u32(f.get(), uint32_t(cfg.size()));
    fwrite(cfg.data(), 1, cfg.size(), f.get());

    uint32_t count = 0;
    const_cast<Model &>(m).params.for_each([&count](const std::string &, auto &) { ++count; });
    put_u32(f.get(), count);
    bool ok = true;
    const_cast<Model &>(m).params.for_each([&](const std::string & name, auto & w) {
        put_u32(f.get(), uint32_t(name.size()));
        fwrite(name.data(), 1, name.size(), f.get());
        put_u32(f.get(), uint32_t(w.rows()));
        put_u32(f.get(), uint32_t(w.cols()));
        size_t n = size_t(w.size());
        if (n > 0 && fwrite(w.data(), sizeof(float), n, f.get()) != n) ok = false;
    });
    if (!ok || ferror(f.get())) throw DataError("short write: " + path);
}

Model load_checkpoint(const std::string & path) {
    FilePtr f(fopen(path.c_str(), "rb"));
    if (!f) throw DataError("cannot open: " + path);
    char magic[4];
    if (fread(magic, 1, 4, f.get()) != 4 || std::memcmp(magic, "TRTM", 4) != 0)
        throw SchemaMismatch("bad checkpoint magic: " + path);
    uint32_t version = get_u32(f.get(), path);
    if (version != kCheckpointVersion)
        throw SchemaMismatch("unsupported checkpoint version " + std::to_string(version));
    uint32_t cfg_len = get_u32(f.get(), path);
    std::string cfg_str(cfg_len, '\0');
    if (fread(cfg_str.data(), 1, cfg_len, f.get()) != cfg_len)
        throw DataError("truncated checkpoint: " + path);
    ModelConfig cfg;
    try {
        cfg = config_from_json(json::parse(cfg_str));
    } catch (const json::exception & e) {
        throw SchemaMismatch(std::string("bad checkpoint config: ") + e.what());
    }
    Model m = Model::init(cfg, 0);
    uint32_t count = get_u32(f.get(), path);
    uint32_t seen = 0;
    m.params.for_each([&](const std::string & name, auto & w) {
        uint32_t name_len = get_u32(f.get(), path);
        std::string got(name_len, '\0');
        if (fread(got.data(), 1, name_len, f.get()) != name_len)
            throw DataError("truncated checkpoint: " + path);
        if (got != name)
            throw SchemaMismatch("checkpoint tensor order mismatch: expected " + name + ", found " +
                                 got);
        uint32_t rows = get_u32(f.get(), path);
        uint32_t cols = get_u32(f.get(), path);
        if (int(rows) != w.rows() || int(cols) != w.cols())
            throw ShapeMismatch("checkpoint tensor " + name + " has shape " + std::to_string(rows) +
                                "x" + std::to_string(cols));
        size_t n = size_t(w.size());
        if (n > 0 && fread(w.data(), sizeof(float), n, f.get()) != n)
            throw DataError("truncated checkpoint: " + path);
        ++seen;
    });
    if (seen != count) throw SchemaMismatch("checkpoint tensor count mismatch: " + path);
    return m;
}

} // namespace trtlab

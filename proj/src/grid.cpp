#include "trtlab/grid.hpp"

#include <cstdio>
#include <cstring>
#include <memory>

#include "trtlab/errors.hpp"

namespace trtlab {

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
    if (fread(b, 1, 4, f) != 4) throw DataError("truncated grid file: " + path);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

} // namespace

void write_grid(const std::string & path, const Grid & g) {
    FilePtr f(fopen(path.c_str(), "wb"));
    if (!f) throw DataError("cannot open for write: " + path);
    fwrite("TRTD", 1, 4, f.get());
    put_u32(f.get(), kGridFormatVersion);
    put_u32(f.get(), uint32_t(g.height));
    put_u32(f.get(), uint32_t(g.width));
    static_assert(sizeof(float) == 4);
    if (!g.data.empty() &&
        fwrite(g.data.data(), sizeof(float), g.data.size(), f.get()) != g.data.size())
        throw DataError("short write: " + path);
}

Grid read_grid(const std::string & path) {
    FilePtr f(fopen(path.c_str(), "rb"));
    if (!f) throw DataError("cannot open: " + path);
    char magic[4];
    if (fread(magic, 1, 4, f.get()) != 4 || memcmp(magic, "TRTD", 4) != 0)
        throw SchemaMismatch("bad grid magic: " + path);
    uint32_t version = get_u32(f.get(), path);
    if (version != kGridFormatVersion)
        throw SchemaMismatch("unsupported grid version " + std::to_string(version) + ": " + path);
    int h = int(get_u32(f.get(), path));
    int w = int(get_u32(f.get(), path));
    Grid g(h, w);
    if (!g.data.empty() &&
        fread(g.data.data(), sizeof(float), g.data.size(), f.get()) != g.data.size())
        throw DataError("truncated grid data: " + path);
    return g;
}

} // namespace trtlab

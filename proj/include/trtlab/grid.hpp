#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace trtlab {

// Row-major float32 grid. Multi-channel images interleave channels along the
// row, i.e. a (h, w, c) image is stored as a (h, w*c) grid; the dataset meta
// file records c so loaders can deinterleave.
struct Grid {
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Grid() = default;
    Grid(int h, int w, float fill = 0.0f) : height(h), width(w), data(size_t(h) * w, fill) {}

    float & at(int y, int x) { return data[size_t(y) * width + x]; }
    float at(int y, int x) const { return data[size_t(y) * width + x]; }
    size_t size() const { return data.size(); }
    bool operator==(const Grid & o) const {
        return height == o.height && width == o.width && data == o.data;
    }
};

// Binary sidecar format: magic "TRTD", u32 version, u32 height, u32 width,
// then height*width float32 little-endian. Also reused for continuous target
// caches with (K, D) in the height/width slots.
inline constexpr uint32_t kGridFormatVersion = 1;

void write_grid(const std::string & path, const Grid & g);
Grid read_grid(const std::string & path);

} // namespace trtlab

#include "trtlab/depth_targets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <limits>
#include <memory>

#include "trtlab/errors.hpp"
#include "trtlab/rng.hpp"

namespace trtlab {

namespace fs = std::filesystem;

void TargetConfig::validate() const {
    if (patch_rows < 1 || patch_cols < 1) throw InvalidConfig("patch grid must be at least 1x1");
    if (dim < 1) throw InvalidConfig("target dim must be positive");
    if (discrete_tokens < 1) throw InvalidConfig("discrete token count must be positive");
    if (codebook_size < 1) throw InvalidConfig("codebook size must be positive");
}

uint64_t TargetConfig::fingerprint() const {
    char buf[128];
    int n = snprintf(buf, sizeof buf, "rows=%d|cols=%d|dim=%d|seed=%llu|norm=%d", patch_rows,
                     patch_cols, dim, static_cast<unsigned long long>(projection_seed),
                     int(normalization));
    return fnv1a(buf, size_t(n));
}

std::vector<double> pool_patches(const Grid & depth, int rows, int cols) {
    if (rows < 1 || cols < 1) throw InvalidConfig("patch grid must be at least 1x1");
    if (depth.height < 1 || depth.width < 1) throw DimensionMismatch("empty depth grid");
    std::vector<double> out(size_t(rows) * cols, 0.0);
    std::vector<double> area(size_t(rows) * cols, 0.0);
    const double ph = double(depth.height) / rows;
    const double pw = double(depth.width) / cols;
    for (int y = 0; y < depth.height; ++y) {
        for (int x = 0; x < depth.width; ++x) {
            // A pixel spans [y, y+1) x [x, x+1); split its area across the
            // patches it overlaps.
            int r0 = std::min(rows - 1, int(std::floor(y / ph)));
            int r1 = std::min(rows - 1, int(std::floor((y + 1 - 1e-12) / ph)));
            int c0 = std::min(cols - 1, int(std::floor(x / pw)));
            int c1 = std::min(cols - 1, int(std::floor((x + 1 - 1e-12) / pw)));
            for (int r = r0; r <= r1; ++r) {
                double oy = std::min(double(y + 1), (r + 1) * ph) - std::max(double(y), r * ph);
                if (oy <= 0) continue;
                for (int c = c0; c <= c1; ++c) {
                    double ox = std::min(double(x + 1), (c + 1) * pw) - std::max(double(x), c * pw);
                    if (ox <= 0) continue;
                    size_t k = size_t(r) * cols + c;
                    out[k] += oy * ox * double(depth.at(y, x));
                    area[k] += oy * ox;
                }
            }
        }
    }
    for (size_t k = 0; k < out.size(); ++k) out[k] /= area[k];
    return out;
}

std::vector<float> projection_row(const TargetConfig & cfg, int grid_h, int grid_w) {
    cfg.validate();
    const double patch_dim = double(grid_h) * grid_w / double(cfg.span_tokens());
    const double sigma = 1.0 / std::sqrt(patch_dim);
    Rng rng = Rng::derive(cfg.projection_seed, {0});
    std::vector<float> w(size_t(cfg.dim));
    for (auto & v : w) v = float(rng.gaussian(0.0, sigma));
    return w;
}

Grid encode_depth(const Grid & depth, const TargetConfig & cfg) {
    cfg.validate();
    auto means = pool_patches(depth, cfg.patch_rows, cfg.patch_cols);
    auto w = projection_row(cfg, depth.height, depth.width);
    Grid z(cfg.span_tokens(), cfg.dim);
    for (int k = 0; k < z.height; ++k)
        for (int j = 0; j < z.width; ++j) z.at(k, j) = float(means[size_t(k)] * double(w[size_t(j)]));
    if (cfg.normalization == TargetConfig::Normalization::kUnitNorm) {
        for (int k = 0; k < z.height; ++k) {
            double norm = 0.0;
            for (int j = 0; j < z.width; ++j) norm += double(z.at(k, j)) * z.at(k, j);
            norm = std::sqrt(norm);
            if (norm > 0.0)
                for (int j = 0; j < z.width; ++j) z.at(k, j) = float(z.at(k, j) / norm);
        }
    }
    return z;
}

namespace {

bool perfect_square(int n, int & root) {
    int r = int(std::lround(std::sqrt(double(n))));
    if (r * r == n) {
        root = r;
        return true;
    }
    return false;
}

// Half-pixel source coordinate for destination index i, clamped into range.
double src_coord(int i, int dst_n, int src_n) {
    double s = (i + 0.5) * double(src_n) / dst_n - 0.5;
    return std::clamp(s, 0.0, double(src_n - 1));
}

} // namespace

Grid resize_targets(const Grid & z, int new_k) {
    if (new_k < 1) throw InvalidConfig("span length must be positive");
    const int k_src = z.height;
    const int dim = z.width;
    if (k_src < 1) throw DimensionMismatch("empty span");
    if (new_k == k_src) return z;

    Grid out(new_k, dim);
    int rs = 0, rd = 0;
    if (perfect_square(k_src, rs) && perfect_square(new_k, rd)) {
        for (int oy = 0; oy < rd; ++oy) {
            double sy = src_coord(oy, rd, rs);
            int y0 = int(std::floor(sy));
            int y1 = std::min(y0 + 1, rs - 1);
            double fy = sy - y0;
            for (int ox = 0; ox < rd; ++ox) {
                double sx = src_coord(ox, rd, rs);
                int x0 = int(std::floor(sx));
                int x1 = std::min(x0 + 1, rs - 1);
                double fx = sx - x0;
                for (int j = 0; j < dim; ++j) {
                    double v00 = z.at(y0 * rs + x0, j), v01 = z.at(y0 * rs + x1, j);
                    double v10 = z.at(y1 * rs + x0, j), v11 = z.at(y1 * rs + x1, j);
                    double top = v00 + (v01 - v00) * fx;
                    double bot = v10 + (v11 - v10) * fx;
                    out.at(oy * rd + ox, j) = float(top + (bot - top) * fy);
                }
            }
        }
        return out;
    }
    return resize_tokens_linear(z, new_k);
}

Grid resize_tokens_linear(const Grid & z, int new_k) {
    if (new_k < 1) throw InvalidConfig("span length must be positive");
    const int k_src = z.height;
    const int dim = z.width;
    if (k_src < 1) throw DimensionMismatch("empty span");
    if (new_k == k_src) return z;
    Grid out(new_k, dim);
    for (int i = 0; i < new_k; ++i) {
        double s = src_coord(i, new_k, k_src);
        int s0 = int(std::floor(s));
        int s1 = std::min(s0 + 1, k_src - 1);
        double f = s - s0;
        for (int j = 0; j < dim; ++j)
            out.at(i, j) = float(double(z.at(s0, j)) + (double(z.at(s1, j)) - z.at(s0, j)) * f);
    }
    return out;
}

namespace {

double sq_dist(const float * a, const float * b, int dim) {
    double d = 0.0;
    for (int j = 0; j < dim; ++j) {
        double t = double(a[j]) - b[j];
        d += t * t;
    }
    return d;
}

} // namespace

Codebook train_codebook(const std::vector<Grid> & spans, int size, uint64_t seed, int max_iters) {
    if (size < 1) throw InvalidConfig("codebook size must be positive");
    std::vector<const float *> pts;
    int dim = -1;
    for (const auto & s : spans) {
        if (dim == -1) dim = s.width;
        if (s.width != dim) throw DimensionMismatch("span dims differ across codebook inputs");
        for (int k = 0; k < s.height; ++k) pts.push_back(&s.data[size_t(k) * s.width]);
    }
    if (int(pts.size()) < size)
        throw InsufficientData("fewer token vectors than codebook entries");

    Codebook cb;
    cb.dim = dim;
    cb.centroids.assign(size_t(size) * dim, 0.0f);

    // k-means++ seeding.
    Rng rng = Rng::derive(seed, {0x6b6d}); // "km"
    std::vector<double> d2(pts.size(), std::numeric_limits<double>::max());
    size_t first = size_t(rng.uniform_int(0, int64_t(pts.size()) - 1));
    std::memcpy(cb.centroids.data(), pts[first], sizeof(float) * size_t(dim));
    for (int c = 1; c < size; ++c) {
        const float * prev = cb.centroid(c - 1);
        double total = 0.0;
        for (size_t i = 0; i < pts.size(); ++i) {
            d2[i] = std::min(d2[i], sq_dist(pts[i], prev, dim));
            total += d2[i];
        }
        size_t pick = 0;
        if (total > 0.0) {
            double target = rng.next_unit() * total;
            double acc = 0.0;
            pick = pts.size() - 1;
            for (size_t i = 0; i < pts.size(); ++i) {
                acc += d2[i];
                if (acc >= target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = size_t(rng.uniform_int(0, int64_t(pts.size()) - 1));
        }
        std::memcpy(cb.centroids.data() + size_t(c) * dim, pts[pick], sizeof(float) * size_t(dim));
    }

    std::vector<int> assign(pts.size(), -1);
    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        for (size_t i = 0; i < pts.size(); ++i) {
            int best = nearest_centroid(cb, pts[i], dim);
            if (best != assign[i]) {
                assign[i] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;

        std::vector<double> sums(size_t(size) * dim, 0.0);
        std::vector<int> counts(size_t(size), 0);
        for (size_t i = 0; i < pts.size(); ++i) {
            ++counts[size_t(assign[i])];
            for (int j = 0; j < dim; ++j) sums[size_t(assign[i]) * dim + j] += pts[i][j];
        }
        for (int c = 0; c < size; ++c) {
            if (counts[size_t(c)] == 0) {
                // Reseed to the point farthest from its own centroid.
                size_t far = 0;
                double far_d = -1.0;
                for (size_t i = 0; i < pts.size(); ++i) {
                    double d = sq_dist(pts[i], cb.centroid(assign[i]), dim);
                    if (d > far_d) {
                        far_d = d;
                        far = i;
                    }
                }
                std::memcpy(cb.centroids.data() + size_t(c) * dim, pts[far],
                            sizeof(float) * size_t(dim));
                continue;
            }
            for (int j = 0; j < dim; ++j)
                cb.centroids[size_t(c) * dim + j] =
                    float(sums[size_t(c) * dim + j] / counts[size_t(c)]);
        }
    }
    return cb;
}

int nearest_centroid(const Codebook & cb, const float * vec, int dim) {
    if (dim != cb.dim) throw DimensionMismatch("vector dim does not match codebook");
    int best = 0;
    double best_d = sq_dist(vec, cb.centroid(0), dim);
    for (int c = 1; c < cb.size(); ++c) {
        double d = sq_dist(vec, cb.centroid(c), dim);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

std::vector<int> quantize(const Codebook & cb, const Grid & z) {
    std::vector<int> out(size_t(z.height));
    for (int k = 0; k < z.height; ++k)
        out[size_t(k)] = nearest_centroid(cb, &z.data[size_t(k) * z.width], z.width);
    return out;
}

namespace {

constexpr char kCodebookMagic[4] = {'T', 'R', 'T', 'C'};
constexpr uint32_t kCodebookVersion = 1;

void put_u32_f(FILE * f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    fwrite(b, 1, 4, f);
}

uint32_t get_u32_f(FILE * f, const std::string & path) {
    unsigned char b[4];
    if (fread(b, 1, 4, f) != 4) throw DataError("truncated codebook: " + path);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

struct FileCloser {
    void operator()(FILE * f) const {
        if (f) fclose(f);
    }
};

} // namespace

void write_codebook(const std::string & path, const Codebook & cb) {
    std::unique_ptr<FILE, FileCloser> f(fopen(path.c_str(), "wb"));
    if (!f) throw DataError("cannot open for write: " + path);
    fwrite(kCodebookMagic, 1, 4, f.get());
    put_u32_f(f.get(), kCodebookVersion);
    put_u32_f(f.get(), uint32_t(cb.size()));
    put_u32_f(f.get(), uint32_t(cb.dim));
    if (!cb.centroids.empty() &&
        fwrite(cb.centroids.data(), sizeof(float), cb.centroids.size(), f.get()) !=
            cb.centroids.size())
        throw DataError("short write: " + path);
}

Codebook read_codebook(const std::string & path) {
    std::unique_ptr<FILE, FileCloser> f(fopen(path.c_str(), "rb"));
    if (!f) throw DataError("cannot open: " + path);
    char magic[4];
    if (fread(magic, 1, 4, f.get()) != 4 || std::memcmp(magic, kCodebookMagic, 4) != 0)
        throw SchemaMismatch("bad codebook magic: " + path);
    uint32_t version = get_u32_f(f.get(), path);
    if (version != kCodebookVersion)
        throw SchemaMismatch("unsupported codebook version " + std::to_string(version));
    uint32_t n = get_u32_f(f.get(), path);
    uint32_t dim = get_u32_f(f.get(), path);
    Codebook cb;
    cb.dim = int(dim);
    cb.centroids.resize(size_t(n) * dim);
    if (!cb.centroids.empty() &&
        fread(cb.centroids.data(), sizeof(float), cb.centroids.size(), f.get()) !=
            cb.centroids.size())
        throw DataError("truncated codebook: " + path);
    return cb;
}

SpanStats span_statistics(const std::vector<Grid> & spans, SpanPooling pooling) {
    if (spans.empty()) throw InsufficientData("no spans for statistics");
    const int k = spans[0].height;
    const int dim = spans[0].width;
    for (const auto & s : spans)
        if (s.height != k || s.width != dim)
            throw DimensionMismatch("span shapes differ across statistics inputs");

    SpanStats st;
    st.pooling = pooling;
    st.k = k;
    st.dim = dim;
    size_t bins = pooling == SpanPooling::kSpanScalar ? 1
                  : pooling == SpanPooling::kPerDimension ? size_t(dim)
                                                          : size_t(k) * dim;
    std::vector<double> sum(bins, 0.0), sumsq(bins, 0.0);
    std::vector<size_t> count(bins, 0);
    for (const auto & s : spans) {
        for (int kk = 0; kk < k; ++kk) {
            for (int j = 0; j < dim; ++j) {
                size_t bin = pooling == SpanPooling::kSpanScalar ? 0
                             : pooling == SpanPooling::kPerDimension ? size_t(j)
                                                                     : size_t(kk) * dim + j;
                double v = s.at(kk, j);
                sum[bin] += v;
                sumsq[bin] += v * v;
                ++count[bin];
            }
        }
    }
    st.mean.resize(bins);
    st.stddev.resize(bins);
    for (size_t b = 0; b < bins; ++b) {
        st.mean[b] = sum[b] / double(count[b]);
        double var = sumsq[b] / double(count[b]) - st.mean[b] * st.mean[b];
        st.stddev[b] = std::sqrt(std::max(0.0, var));
    }
    return st;
}

std::string target_cache_name(const std::string & scene_id, const TargetConfig & cfg) {
    char hex[17];
    snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(cfg.fingerprint()));
    return scene_id + "." + hex + ".z.trtd";
}

Grid load_or_encode(const std::string & dataset_dir, const std::string & scene_id,
                    const TargetConfig & cfg) {
    fs::path cache = fs::path(dataset_dir) / "targets" / target_cache_name(scene_id, cfg);
    if (fs::exists(cache)) {
        Grid z = read_grid(cache.string());
        if (z.height != cfg.span_tokens() || z.width != cfg.dim)
            throw SchemaMismatch("cached target shape mismatch: " + cache.string());
        return z;
    }
    Grid depth = read_grid((fs::path(dataset_dir) / "grids" / (scene_id + ".depth.trtd")).string());
    Grid z = encode_depth(depth, cfg);
    fs::create_directories(cache.parent_path());
    write_grid(cache.string(), z);
    return z;
}

} // namespace trtlab

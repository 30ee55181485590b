#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trtlab/grid.hpp"

namespace trtlab {

// Continuous depth targets: the depth grid is area-pooled onto a patch grid
// (one mean scalar per patch) and each pooled scalar is expanded through one
// frozen Gaussian row into a dim-wide vector. The result is a (K, dim) span
// with K = patch_rows * patch_cols.
struct TargetConfig {
    int patch_rows = 2;
    int patch_cols = 2;
    int dim = 8;
    uint64_t projection_seed = 17;
    enum class Normalization { kNone, kUnitNorm };
    Normalization normalization = Normalization::kNone;

    // Discrete mode settings, used by callers that quantize spans.
    bool discrete = false;
    int discrete_tokens = 100;
    int codebook_size = 64;

    int span_tokens() const { return patch_rows * patch_cols; }
    void validate() const;
    // Stable fingerprint of the fields that determine continuous encodings;
    // cache file names embed it so stale caches can never be picked up.
    uint64_t fingerprint() const;
};

// Area-weighted patch means in row-major patch order. Patch boundaries sit at
// fractional pixel positions when the grid does not divide evenly; each pixel
// contributes by its overlap area.
std::vector<double> pool_patches(const Grid & depth, int rows, int cols);

// The frozen projection row w, length cfg.dim, entries N(0, 1/sqrt(patch_dim))
// where patch_dim is the average pixel count per patch of an (h, w) grid.
std::vector<float> projection_row(const TargetConfig & cfg, int grid_h, int grid_w);

Grid encode_depth(const Grid & depth, const TargetConfig & cfg);

// Resamples a (K, dim) span to (new_k, dim) with half-pixel centers: identity
// when new_k == K, separable 2-D bilinear when both token counts are perfect
// squares (tokens laid out row-major as square grids), 1-D linear along the
// token axis otherwise.
Grid resize_targets(const Grid & z, int new_k);

// The 1-D token-axis path alone, for callers that must never reshape tokens
// into a 2-D layout (count-matched span truncation/extension).
Grid resize_tokens_linear(const Grid & z, int new_k);

struct Codebook {
    int dim = 0;
    std::vector<float> centroids; // (size, dim) row-major
    int size() const { return dim == 0 ? 0 : int(centroids.size()) / dim; }
    const float * centroid(int i) const { return centroids.data() + size_t(i) * dim; }
};

// Lloyd k-means over all token vectors of the given spans, k-means++ init,
// at most max_iters sweeps. Empty clusters reseed to the point farthest from
// its centroid. Deterministic given the seed.
Codebook train_codebook(const std::vector<Grid> & spans, int size, uint64_t seed,
                        int max_iters = 100);

// Nearest centroid by squared euclidean distance; ties resolve to the lowest
// centroid index.
int nearest_centroid(const Codebook & cb, const float * vec, int dim);
std::vector<int> quantize(const Codebook & cb, const Grid & z);

void write_codebook(const std::string & path, const Codebook & cb);
Codebook read_codebook(const std::string & path);

enum class SpanPooling { kSpanScalar, kPerDimension, kPerVector };

// Mean and population standard deviation of ground-truth span entries under
// the chosen pooling: one scalar pair, one pair per dimension, or one pair
// per (token, dimension) position.
struct SpanStats {
    SpanPooling pooling = SpanPooling::kSpanScalar;
    int k = 0;
    int dim = 0;
    std::vector<double> mean;
    std::vector<double> stddev;
};
SpanStats span_statistics(const std::vector<Grid> & spans, SpanPooling pooling);

// Cached continuous encodings live in <dataset_dir>/targets/. The cache key
// is the scene id plus the config fingerprint.
std::string target_cache_name(const std::string & scene_id, const TargetConfig & cfg);
Grid load_or_encode(const std::string & dataset_dir, const std::string & scene_id,
                    const TargetConfig & cfg);

} // namespace trtlab

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "trtlab/depth_targets.hpp"
#include "trtlab/errors.hpp"
#include "trtlab/rng.hpp"

using namespace trtlab;
namespace fs = std::filesystem;

namespace {

Grid random_grid(int h, int w, uint64_t seed) {
    Grid g(h, w);
    Rng r(seed);
    for (auto & v : g.data) v = float(r.uniform(0.0, 255.0));
    return g;
}

// Patch-major reference pooling: integrates each patch over explicit interval
// intersections, independently of the production pixel-major sweep.
std::vector<double> pool_reference(const Grid & g, int rows, int cols) {
    std::vector<double> out(size_t(rows) * cols);
    const double ph = double(g.height) / rows;
    const double pw = double(g.width) / cols;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            double y_lo = r * ph, y_hi = (r + 1) * ph;
            double x_lo = c * pw, x_hi = (c + 1) * pw;
            double acc = 0.0, area = 0.0;
            for (int y = 0; y < g.height; ++y) {
                double oy = std::min(y_hi, double(y + 1)) - std::max(y_lo, double(y));
                if (oy <= 0) continue;
                for (int x = 0; x < g.width; ++x) {
                    double ox = std::min(x_hi, double(x + 1)) - std::max(x_lo, double(x));
                    if (ox <= 0) continue;
                    acc += oy * ox * double(g.at(y, x));
                    area += oy * ox;
                }
            }
            out[size_t(r) * cols + c] = acc / area;
        }
    }
    return out;
}

double lerp(double a, double b, double f) { return a + (b - a) * f; }

fs::path fresh_dir(const std::string & name) {
    fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

} // namespace

TEST_CASE("pool_patches matches the patch-major reference on uneven splits") {
    Grid g = random_grid(10, 13, 3);
    for (auto [rows, cols] : {std::pair{3, 3}, {2, 5}, {7, 4}, {1, 1}, {10, 13}}) {
        auto got = pool_patches(g, rows, cols);
        auto want = pool_reference(g, rows, cols);
        REQUIRE(got.size() == want.size());
        for (size_t i = 0; i < got.size(); ++i)
            CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
}

TEST_CASE("pool_patches: divisible grids reduce to plain means") {
    Grid g = random_grid(8, 12, 5);
    auto got = pool_patches(g, 2, 3);
    for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 3; ++c) {
            double acc = 0.0;
            for (int y = r * 4; y < (r + 1) * 4; ++y)
                for (int x = c * 4; x < (c + 1) * 4; ++x) acc += double(g.at(y, x));
            CHECK(got[size_t(r) * 3 + c] == doctest::Approx(acc / 16.0).epsilon(1e-12));
        }
    }

    Grid flat(9, 9, 42.5f);
    for (double m : pool_patches(flat, 2, 2)) CHECK(m == doctest::Approx(42.5).epsilon(1e-12));
}

TEST_CASE("pool_patches conserves total mass") {
    Grid g = random_grid(11, 7, 9);
    auto means = pool_patches(g, 3, 2);
    double per_patch_area = (11.0 / 3.0) * (7.0 / 2.0);
    double pooled_total = 0.0;
    for (double m : means) pooled_total += m * per_patch_area;
    double pixel_total = 0.0;
    for (float v : g.data) pixel_total += double(v);
    CHECK(pooled_total == doctest::Approx(pixel_total).epsilon(1e-10));
}

TEST_CASE("projection_row: frozen per seed, scaled by pixels per patch") {
    TargetConfig cfg;
    auto a = projection_row(cfg, 336, 336);
    auto b = projection_row(cfg, 336, 336);
    CHECK(a == b);

    TargetConfig other = cfg;
    other.projection_seed = 18;
    CHECK(projection_row(other, 336, 336) != a);

    TargetConfig wide = cfg;
    wide.dim = 4096;
    auto w = projection_row(wide, 336, 336);
    double sumsq = 0.0;
    for (float v : w) sumsq += double(v) * v;
    double sigma_hat = std::sqrt(sumsq / double(w.size()));
    double sigma_want = 1.0 / std::sqrt(336.0 * 336.0 / 4.0);
    CHECK(sigma_hat == doctest::Approx(sigma_want).epsilon(0.10));
}

TEST_CASE("encode_depth is the pooled scalar times the frozen row") {
    Grid depth = random_grid(48, 48, 21);
    TargetConfig cfg;
    cfg.patch_rows = 2;
    cfg.patch_cols = 2;
    cfg.dim = 8;
    Grid z = encode_depth(depth, cfg);
    REQUIRE(z.height == 4);
    REQUIRE(z.width == 8);
    auto means = pool_reference(depth, 2, 2);
    auto w = projection_row(cfg, 48, 48);
    for (int k = 0; k < 4; ++k)
        for (int j = 0; j < 8; ++j)
            CHECK(double(z.at(k, j)) ==
                  doctest::Approx(means[size_t(k)] * double(w[size_t(j)])).epsilon(1e-6));
}

TEST_CASE("encode_depth: perturbations are bounded by the projection row") {
    Grid depth = random_grid(32, 32, 4);
    TargetConfig cfg;
    Grid z0 = encode_depth(depth, cfg);
    auto w = projection_row(cfg, 32, 32);
    double wmax = 0.0;
    for (float v : w) wmax = std::max(wmax, std::fabs(double(v)));

    const double eps = 0.75;
    Grid bumped = depth;
    Rng r(8);
    for (auto & v : bumped.data) v += float(r.uniform(-eps, eps));
    Grid z1 = encode_depth(bumped, cfg);
    for (size_t i = 0; i < z0.data.size(); ++i)
        CHECK(std::fabs(double(z1.data[i]) - z0.data[i]) <= eps * wmax * (1.0 + 1e-5) + 1e-9);
}

TEST_CASE("encode_depth: unit normalization, zero rows stay zero") {
    TargetConfig cfg;
    cfg.normalization = TargetConfig::Normalization::kUnitNorm;
    Grid depth = random_grid(16, 16, 6);
    Grid z = encode_depth(depth, cfg);
    for (int k = 0; k < z.height; ++k) {
        double n = 0.0;
        for (int j = 0; j < z.width; ++j) n += double(z.at(k, j)) * z.at(k, j);
        CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-5));
    }

    Grid zeros(16, 16, 0.0f);
    Grid zz = encode_depth(zeros, cfg);
    for (float v : zz.data) CHECK(v == 0.0f);
}

TEST_CASE("resize_targets: same length is bit-exact identity") {
    Grid z = random_grid(9, 5, 13);
    CHECK(resize_targets(z, 9) == z);
}

TEST_CASE("resize_targets: 1-D linear with half-pixel centers") {
    Grid z(3, 1);
    z.at(0, 0) = 0.0f;
    z.at(1, 0) = 10.0f;
    z.at(2, 0) = 20.0f;

    Grid down = resize_targets(z, 2);
    CHECK(down.at(0, 0) == doctest::Approx(2.5));
    CHECK(down.at(1, 0) == doctest::Approx(17.5));

    Grid up = resize_targets(z, 6);
    CHECK(up.at(0, 0) == doctest::Approx(0.0));   // clamped edge
    CHECK(up.at(5, 0) == doctest::Approx(20.0));  // clamped edge
    CHECK(up.at(2, 0) == doctest::Approx(lerp(0.0, 10.0, 0.75)));
    CHECK(up.at(3, 0) == doctest::Approx(lerp(10.0, 20.0, 0.25)));
}

TEST_CASE("resize_targets: square token counts use 2-D bilinear") {
    Grid z(4, 2);
    // Token t is cell (t/2, t%2) of a 2x2 grid; dim 1 mirrors dim 0 scaled.
    const double a = 1.0, b = 5.0, c = 9.0, d = 13.0;
    const double vals[4] = {a, b, c, d};
    for (int t = 0; t < 4; ++t) {
        z.at(t, 0) = float(vals[t]);
        z.at(t, 1) = float(2.0 * vals[t]);
    }
    Grid up = resize_targets(z, 16);
    REQUIRE(up.height == 16);
    const double coords[4] = {0.0, 0.25, 0.75, 1.0}; // clamped half-pixel sources
    for (int oy = 0; oy < 4; ++oy) {
        for (int ox = 0; ox < 4; ++ox) {
            double want = lerp(lerp(a, b, coords[ox]), lerp(c, d, coords[ox]), coords[oy]);
            CHECK(double(up.at(oy * 4 + ox, 0)) == doctest::Approx(want).epsilon(1e-6));
            CHECK(double(up.at(oy * 4 + ox, 1)) == doctest::Approx(2 * want).epsilon(1e-6));
        }
    }

    // 4 tokens -> 9 tokens is square-to-square as well (2x2 -> 3x3).
    Grid nine = resize_targets(z, 9);
    CHECK(double(nine.at(4, 0)) == doctest::Approx((a + b + c + d) / 4.0).epsilon(1e-6));
}

TEST_CASE("resize_targets: constant spans stay constant at any length") {
    Grid z(5, 3, 7.25f);
    for (int k : {1, 2, 4, 9, 10, 25, 100}) {
        Grid out = resize_targets(z, k);
        REQUIRE(out.height == k);
        for (float v : out.data) CHECK(v == doctest::Approx(7.25f));
    }
}

TEST_CASE("k-means recovers well-separated clusters and quantize is stable") {
    const double centers[3][2] = {{0.0, 0.0}, {10.0, 0.0}, {0.0, 10.0}};
    std::vector<Grid> spans;
    Rng r(2);
    for (int c = 0; c < 3; ++c) {
        Grid g(60, 2);
        for (int i = 0; i < 60; ++i) {
            g.at(i, 0) = float(centers[c][0] + r.uniform(-0.5, 0.5));
            g.at(i, 1) = float(centers[c][1] + r.uniform(-0.5, 0.5));
        }
        spans.push_back(g);
    }
    Codebook cb = train_codebook(spans, 3, 99);
    REQUIRE(cb.size() == 3);
    REQUIRE(cb.dim == 2);

    std::set<int> ids;
    for (int c = 0; c < 3; ++c) {
        auto q = quantize(cb, spans[size_t(c)]);
        for (int id : q) CHECK(id == q[0]);
        ids.insert(q[0]);
        double dx = double(cb.centroid(q[0])[0]) - centers[c][0];
        double dy = double(cb.centroid(q[0])[1]) - centers[c][1];
        CHECK(std::hypot(dx, dy) < 0.5);
    }
    CHECK(ids.size() == 3);

    Codebook cb2 = train_codebook(spans, 3, 99);
    CHECK(cb2.centroids == cb.centroids);
}

TEST_CASE("nearest_centroid ties resolve to the lowest index") {
    Codebook cb;
    cb.dim = 1;
    cb.centroids = {0.0f, 2.0f, 2.0f};
    float mid = 1.0f;
    CHECK(nearest_centroid(cb, &mid, 1) == 0);
    float two = 2.0f;
    CHECK(nearest_centroid(cb, &two, 1) == 1);
    CHECK_THROWS_AS(nearest_centroid(cb, &mid, 3), DimensionMismatch);
}

TEST_CASE("k-means degenerate inputs terminate and tiny inputs are rejected") {
    Grid dup(10, 1);
    for (int i = 0; i < 10; ++i) dup.at(i, 0) = i < 5 ? 0.0f : 1.0f;
    Codebook cb = train_codebook({dup}, 3, 1);
    CHECK(cb.size() == 3);

    Grid two(2, 1);
    two.at(0, 0) = 0.0f;
    two.at(1, 0) = 1.0f;
    CHECK_THROWS_AS(train_codebook({two}, 3, 1), InsufficientData);
}

TEST_CASE("codebook file round trip and corruption checks") {
    Codebook cb;
    cb.dim = 3;
    Rng r(31);
    cb.centroids.resize(12);
    for (auto & v : cb.centroids) v = float(r.gaussian());

    auto dir = fresh_dir("trtlab_test_codebook");
    auto path = (dir / "cb.trtc").string();
    write_codebook(path, cb);
    Codebook back = read_codebook(path);
    CHECK(back.dim == 3);
    CHECK(back.centroids == cb.centroids);

    {
        std::ofstream bad(path, std::ios::binary);
        bad << "NOPE";
    }
    CHECK_THROWS_AS(read_codebook(path), SchemaMismatch);
    CHECK_THROWS_AS(read_codebook((dir / "missing.trtc").string()), DataError);
}

TEST_CASE("span_statistics: all three poolings on a hand-computed case") {
    Grid s1(2, 2), s2(2, 2);
    s1.at(0, 0) = 1;
    s1.at(0, 1) = 2;
    s1.at(1, 0) = 3;
    s1.at(1, 1) = 4;
    s2.at(0, 0) = 5;
    s2.at(0, 1) = 6;
    s2.at(1, 0) = 7;
    s2.at(1, 1) = 8;
    std::vector<Grid> spans = {s1, s2};

    auto scalar = span_statistics(spans, SpanPooling::kSpanScalar);
    REQUIRE(scalar.mean.size() == 1);
    CHECK(scalar.mean[0] == doctest::Approx(4.5));
    CHECK(scalar.stddev[0] == doctest::Approx(std::sqrt(5.25)));

    auto per_dim = span_statistics(spans, SpanPooling::kPerDimension);
    REQUIRE(per_dim.mean.size() == 2);
    CHECK(per_dim.mean[0] == doctest::Approx(4.0));
    CHECK(per_dim.mean[1] == doctest::Approx(5.0));
    CHECK(per_dim.stddev[0] == doctest::Approx(std::sqrt(5.0)));
    CHECK(per_dim.stddev[1] == doctest::Approx(std::sqrt(5.0)));

    auto per_vec = span_statistics(spans, SpanPooling::kPerVector);
    REQUIRE(per_vec.mean.size() == 4);
    CHECK(per_vec.mean[0] == doctest::Approx(3.0));
    CHECK(per_vec.stddev[0] == doctest::Approx(2.0));
    CHECK(per_vec.mean[3] == doctest::Approx(6.0));
    CHECK(per_vec.stddev[3] == doctest::Approx(2.0));

    CHECK_THROWS_AS(span_statistics({}, SpanPooling::kSpanScalar), InsufficientData);
    std::vector<Grid> ragged = {s1, Grid(3, 2)};
    CHECK_THROWS_AS(span_statistics(ragged, SpanPooling::kSpanScalar), DimensionMismatch);
}

TEST_CASE("target cache: encode once, then serve from disk") {
    auto dir = fresh_dir("trtlab_test_targets");
    fs::create_directories(dir / "grids");
    Grid depth = random_grid(32, 32, 77);
    write_grid((dir / "grids" / "sc000000.depth.trtd").string(), depth);

    TargetConfig cfg;
    Grid z = load_or_encode(dir.string(), "sc000000", cfg);
    CHECK(z == encode_depth(depth, cfg));
    fs::path cache = dir / "targets" / target_cache_name("sc000000", cfg);
    CHECK(fs::exists(cache));

    // Remove the source grid: the second call must come from the cache.
    fs::remove(dir / "grids" / "sc000000.depth.trtd");
    Grid z2 = load_or_encode(dir.string(), "sc000000", cfg);
    CHECK(z2 == z);

    TargetConfig other = cfg;
    other.dim = 16;
    CHECK_THROWS_AS(load_or_encode(dir.string(), "sc000000", other), DataError);
}

TEST_CASE("target cache names track every encoding-relevant field") {
    TargetConfig base;
    std::set<std::string> names;
    names.insert(target_cache_name("sc000000", base));

    TargetConfig a = base;
    a.patch_rows = 4;
    names.insert(target_cache_name("sc000000", a));
    TargetConfig b = base;
    b.patch_cols = 4;
    names.insert(target_cache_name("sc000000", b));
    TargetConfig c = base;
    c.dim = 16;
    names.insert(target_cache_name("sc000000", c));
    TargetConfig d = base;
    d.projection_seed = 99;
    names.insert(target_cache_name("sc000000", d));
    TargetConfig e = base;
    e.normalization = TargetConfig::Normalization::kUnitNorm;
    names.insert(target_cache_name("sc000000", e));

    CHECK(names.size() == 6);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "trtlab/errors.hpp"
#include "trtlab/grid.hpp"
#include "trtlab/rng.hpp"
#include "trtlab/vocab.hpp"

using namespace trtlab;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    fs::path p = fs::temp_directory_path() / "trtlab_test_core";
    fs::create_directories(p);
    return p;
}

} // namespace

TEST_CASE("rng: identical seeds replay, different seeds diverge") {
    Rng a(42), b(42), c(43);
    bool diverged = false;
    for (int i = 0; i < 64; ++i) {
        uint64_t va = a.next_u64();
        CHECK(va == b.next_u64());
        if (va != c.next_u64()) diverged = true;
    }
    CHECK(diverged);
}

TEST_CASE("rng: derive is order and path sensitive") {
    CHECK(Rng::derive(1, {2, 3}).next_u64() != Rng::derive(1, {3, 2}).next_u64());
    CHECK(Rng::derive(1, {2}).next_u64() != Rng::derive(1, {2, 0}).next_u64());
    CHECK(Rng::derive(1, {2, 3}).next_u64() == Rng::derive(1, {2, 3}).next_u64());
    CHECK(Rng::derive(1, {2}).next_u64() != Rng::derive(2, {2}).next_u64());
}

TEST_CASE("rng: uniform stays inside half-open bounds") {
    Rng r(7);
    for (int i = 0; i < 10000; ++i) {
        double v = r.uniform(-2.5, 4.0);
        CHECK(v >= -2.5);
        CHECK(v < 4.0);
    }
}

TEST_CASE("rng: uniform_int covers both inclusive endpoints uniformly") {
    Rng r(11);
    int counts[4] = {0, 0, 0, 0};
    const int draws = 40000;
    for (int i = 0; i < draws; ++i) {
        int64_t v = r.uniform_int(-1, 2);
        REQUIRE(v >= -1);
        REQUIRE(v <= 2);
        ++counts[v + 1];
    }
    // Binomial sd for p=1/4 over 40000 draws is ~87; allow 5 sigma.
    for (int k = 0; k < 4; ++k) CHECK(std::abs(counts[k] - draws / 4) < 5 * 87);
}

TEST_CASE("rng: gaussian moments") {
    Rng r(5);
    const int n = 50000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        double g = r.gaussian();
        sum += g;
        sumsq += g * g;
    }
    double mean = sum / n;
    double var = sumsq / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.03);
    CHECK(std::abs(r.gaussian(10.0, 0.0) - 10.0) < 1e-12);
}

TEST_CASE("rng: shuffle permutes and is seed-deterministic") {
    std::vector<int> xs = {0, 1, 2, 3, 4, 5, 6, 7};
    Rng r(3);
    r.shuffle(xs);
    std::set<int> uniq(xs.begin(), xs.end());
    CHECK(uniq.size() == 8);
    std::vector<int> ys = {0, 1, 2, 3, 4, 5, 6, 7};
    Rng r2(3);
    r2.shuffle(ys);
    CHECK(xs == ys);

    // Position histogram: element 0 should land everywhere roughly equally.
    const int trials = 24000;
    std::vector<int> at_pos(4, 0);
    Rng r3(9);
    for (int t = 0; t < trials; ++t) {
        std::vector<int> zs = {0, 1, 2, 3};
        r3.shuffle(zs);
        for (int p = 0; p < 4; ++p)
            if (zs[size_t(p)] == 0) ++at_pos[size_t(p)];
    }
    for (int p = 0; p < 4; ++p) CHECK(std::abs(at_pos[size_t(p)] - trials / 4) < 5 * 67);
}

TEST_CASE("fnv1a matches the published 64-bit test vectors") {
    CHECK(fnv1a("", 0) == 0xcbf29ce484222325ULL);
    CHECK(fnv1a("a", 1) == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a("foobar", 6) == 0x85944171f73967e8ULL);
}

TEST_CASE("grid: round trip preserves shape and bits") {
    Grid g(3, 5);
    Rng r(1);
    for (auto & v : g.data) v = float(r.gaussian());
    g.at(2, 4) = -0.0f;
    auto path = (temp_dir() / "roundtrip.trtd").string();
    write_grid(path, g);
    Grid back = read_grid(path);
    REQUIRE(back.height == 3);
    REQUIRE(back.width == 5);
    CHECK(back == g);
    CHECK(std::signbit(back.at(2, 4)));
}

TEST_CASE("grid: missing file raises DataError") {
    CHECK_THROWS_AS(read_grid((temp_dir() / "nope.trtd").string()), DataError);
}

TEST_CASE("grid: truncated payload raises DataError") {
    Grid g(4, 4, 1.0f);
    auto path = (temp_dir() / "trunc.trtd").string();
    write_grid(path, g);
    fs::resize_file(path, fs::file_size(path) - 7);
    CHECK_THROWS_AS(read_grid(path), DataError);
}

TEST_CASE("grid: wrong magic or version raises SchemaMismatch") {
    Grid g(2, 2, 0.5f);
    auto path = (temp_dir() / "magic.trtd").string();
    write_grid(path, g);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.put('X');
    }
    CHECK_THROWS_AS(read_grid(path), SchemaMismatch);

    write_grid(path, g);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        f.put(char(99));
    }
    CHECK_THROWS_AS(read_grid(path), SchemaMismatch);
}

TEST_CASE("vocab: ids are dense and round trip") {
    auto v = Vocabulary::build(100);
    REQUIRE(v.size() == int(v.id_to_tok.size()));
    for (int id = 0; id < v.size(); ++id) CHECK(v.token_id(v.token(id)) == id);
    CHECK(v.token(Vocabulary::PAD) == "<PAD>");
    CHECK(v.token(Vocabulary::BOS) == "<BOS>");
    CHECK(v.token(Vocabulary::EOS) == "<EOS>");
    CHECK(v.token(Vocabulary::DEPTH_START) == "<DEPTH_START>");
    CHECK(v.token(Vocabulary::DEPTH_TOKEN) == "<DEPTH_TOKEN>");
    CHECK(v.token(Vocabulary::DEPTH_END) == "<DEPTH_END>");
}

TEST_CASE("vocab: discrete depth block is contiguous and sized exactly") {
    auto v = Vocabulary::build(64);
    CHECK(v.depth_block_size == 64);
    for (int k = 0; k < 64; ++k) {
        CHECK(v.is_depth_id(v.depth_id(k)));
        CHECK(v.token(v.depth_id(k)) == "<DEPTH_" + std::to_string(k) + ">");
    }
    CHECK_FALSE(v.is_depth_id(v.depth_block_begin - 1));
    CHECK_FALSE(v.is_depth_id(v.depth_block_begin + 64));

    auto v0 = Vocabulary::build(0);
    CHECK(v0.depth_block_size == 0);
    for (int id = 0; id < v0.size(); ++id) CHECK_FALSE(v0.is_depth_id(id));
}

TEST_CASE("vocab: letters map to ids and back") {
    auto v = Vocabulary::build(0);
    for (char c = 'A'; c <= 'E'; ++c) {
        int id = v.letter_id(c);
        CHECK(v.is_letter(id));
        CHECK(v.letter_of(id) == c);
        CHECK(v.token(id) == std::string(1, c));
    }
    CHECK_FALSE(v.is_letter(Vocabulary::EOS));
}

TEST_CASE("vocab: encoding splits digits and peels punctuation") {
    auto v = Vocabulary::build(0);
    auto ids = v.encode_text("Point A is marker 3.");
    std::vector<int> want = {v.token_id("Point"), v.token_id("A"), v.token_id("is"),
                             v.token_id("marker"), v.token_id("3"), v.token_id(".")};
    CHECK(ids == want);

    auto ids2 = v.encode_text("Marker 1 is at (88, 112).");
    std::vector<int> want2 = {v.token_id("Marker"), v.token_id("1"), v.token_id("is"),
                              v.token_id("at"),     v.token_id("("), v.token_id("8"),
                              v.token_id("8"),      v.token_id(","), v.token_id("1"),
                              v.token_id("1"),      v.token_id("2"), v.token_id(")"),
                              v.token_id(".")};
    CHECK(ids2 == want2);

    CHECK(v.decode(ids) == "Point A is marker 3 .");
    CHECK_THROWS_AS(v.encode_text("zebra"), UnknownToken);
    CHECK_THROWS_AS(v.token_id("nonsuch"), UnknownToken);
    CHECK_THROWS_AS(v.token(v.size()), UnknownToken);
}

TEST_CASE("vocab: the full short and long prompts encode") {
    auto v = Vocabulary::build(0);
    CHECK_NOTHROW(v.encode_text(
        "Multiple points are circled on the image. Point A is marker 3. Point B is marker 1."
        " Point C is marker 2. Which point is the closest to the camera?"));
    CHECK_NOTHROW(v.encode_text(
        " Think step by step. Marker 1 is at (88, 112). Marker 2 is at (200, 40)."
        " Read the depth value at each marker from the depth map."
        " Higher depth values are closer to the camera."
        " Answer with the letter of the closest point."));
}

TEST_CASE("decode keeps specials when asked") {
    auto v = Vocabulary::build(0);
    std::vector<int> ids = {Vocabulary::BOS, v.token_id("A"), Vocabulary::EOS};
    CHECK(v.decode(ids) == "A");
    CHECK(v.decode(ids, false) == "<BOS> A <EOS>");
}

TEST_CASE("parse errors carry their line number") {
    ParseError e("bad json", 7);
    CHECK(e.line == 7);
    CHECK(std::string(e.what()) == "line 7: bad json");
}

#include "trtlab/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "trtlab/errors.hpp"

namespace trtlab {

namespace fs = std::filesystem;
using nlohmann::json;

void SceneConfig::validate() const {
    if (width <= 0 || height <= 0 || channels <= 0)
        throw InvalidConfig("scene dimensions must be positive");
    if (!(base_min >= 0.0) || !(base_max > base_min))
        throw InvalidConfig("base range must satisfy 0 <= base_min < base_max");
    if (gradient_components < 1) throw InvalidConfig("need at least one gradient component");
    if (!(radius_min > 0.0) || radius_max < radius_min)
        throw InvalidConfig("bad gradient radius range");
    if (center_dist_min < 0.0 || center_dist_max < center_dist_min)
        throw InvalidConfig("bad gradient center distance range");
    if (plateaus_min < 0 || plateaus_max < plateaus_min) throw InvalidConfig("bad plateau count");
    if (plateau_amp_min < 0.0 || plateau_amp_max < plateau_amp_min)
        throw InvalidConfig("bad plateau amplitude range");
    if (plateaus_max > 0 && plateau_amp_max > 0.0) {
        if (plateau_size_min <= 0.0 || plateau_size_max < plateau_size_min ||
            plateau_size_max > 1.0)
            throw InvalidConfig("bad plateau size range");
    }
    if (base_min - plateau_amp_max < 0.0)
        throw InvalidConfig("negative plateaus could push depth below zero");
    if (base_max - base_min - plateau_amp_max < min_dynamic_range)
        throw InvalidConfig("base range cannot guarantee the minimum dynamic range");
}

void SamplingConstraints::validate() const {
    if (x_max < x_min || y_max < y_min) throw InvalidConfig("collapsed sampling bounds");
    if (x_min < 0 || y_min < 0) throw InvalidConfig("negative sampling bounds");
    if (min_pair_distance < 0.0 || min_depth_difference < 0.0)
        throw InvalidConfig("negative sampling minima");
    if (max_attempts <= 0) throw InvalidConfig("attempt budget must be positive");
}

namespace {

struct RadialComponent {
    double cx, cy, radius, amp;
};

std::vector<RadialComponent> draw_components(Rng & rng, const SceneConfig & cfg) {
    const double diag = std::hypot(double(cfg.width), double(cfg.height));
    std::vector<RadialComponent> comps;
    comps.reserve(size_t(cfg.gradient_components));
    for (int i = 0; i < cfg.gradient_components; ++i) {
        RadialComponent c;
        c.radius = rng.uniform(cfg.radius_min, cfg.radius_max) * diag;
        double theta = rng.uniform(0.0, 2.0 * M_PI);
        double dist = rng.uniform(cfg.center_dist_min, cfg.center_dist_max) * c.radius;
        c.cx = 0.5 * cfg.width + std::cos(theta) * dist;
        c.cy = 0.5 * cfg.height + std::sin(theta) * dist;
        double sign = rng.uniform_int(0, 1) == 0 ? -1.0 : 1.0;
        c.amp = sign * rng.uniform(0.5, 1.0);
        comps.push_back(c);
    }
    return comps;
}

std::string scene_name(uint64_t scene_index) {
    char buf[32];
    snprintf(buf, sizeof buf, "sc%06llu", static_cast<unsigned long long>(scene_index));
    return buf;
}

} // namespace

Grid base_field(uint64_t seed, uint64_t scene_index, const SceneConfig & cfg) {
    cfg.validate();
    Rng rng = Rng::derive(seed, {scene_index, 0});
    auto comps = draw_components(rng, cfg);

    std::vector<double> raw(size_t(cfg.width) * cfg.height);
    double mn = 1e300, mx = -1e300;
    for (int y = 0; y < cfg.height; ++y) {
        for (int x = 0; x < cfg.width; ++x) {
            double v = 0.0;
            for (const auto & c : comps) {
                double d = std::hypot(x - c.cx, y - c.cy);
                v += c.amp * std::max(0.0, 1.0 - d / c.radius);
            }
            raw[size_t(y) * cfg.width + x] = v;
            mn = std::min(mn, v);
            mx = std::max(mx, v);
        }
    }
    Grid g(cfg.height, cfg.width);
    if (mx - mn < 1e-12) {
        std::fill(g.data.begin(), g.data.end(), float(cfg.base_min));
        return g;
    }
    const double scale = (cfg.base_max - cfg.base_min) / (mx - mn);
    for (size_t i = 0; i < raw.size(); ++i)
        g.data[i] = float(cfg.base_min + (raw[i] - mn) * scale);
    return g;
}

DepthScene generate_scene(uint64_t seed, uint64_t scene_index, const SceneConfig & cfg) {
    cfg.validate();
    DepthScene scene;
    scene.scene_id = scene_name(scene_index);
    scene.channels = cfg.channels;
    scene.depth = base_field(seed, scene_index, cfg);

    // Plateaus never overlap (bounding-box rejection), so each pixel carries
    // at most one amplitude and depth stays at or above base_min - amp_max.
    Rng prng = Rng::derive(seed, {scene_index, 1});
    int n_plateaus = int(prng.uniform_int(cfg.plateaus_min, cfg.plateaus_max));
    const double side = double(std::min(cfg.width, cfg.height));
    struct Box {
        double x0, x1, y0, y1;
    };
    std::vector<Box> placed;
    for (int i = 0; i < n_plateaus; ++i) {
        for (int attempt = 0; attempt < 100; ++attempt) {
            double amp = prng.uniform(cfg.plateau_amp_min, cfg.plateau_amp_max);
            if (prng.uniform_int(0, 1) == 0) amp = -amp;
            bool disc = prng.uniform_int(0, 1) == 1;
            double cx = prng.uniform(0.0, double(cfg.width));
            double cy = prng.uniform(0.0, double(cfg.height));
            double w = prng.uniform(cfg.plateau_size_min, cfg.plateau_size_max) * side;
            double h = prng.uniform(cfg.plateau_size_min, cfg.plateau_size_max) * side;
            Box box{cx - w / 2 - 1, cx + w / 2 + 1, cy - h / 2 - 1, cy + h / 2 + 1};
            bool overlaps = false;
            for (const auto & b : placed)
                if (box.x0 <= b.x1 && b.x0 <= box.x1 && box.y0 <= b.y1 && b.y0 <= box.y1) {
                    overlaps = true;
                    break;
                }
            if (overlaps) continue;
            if (amp != 0.0) {
                placed.push_back(box);
                int y0 = std::max(0, int(std::floor(cy - h / 2)));
                int y1 = std::min(cfg.height - 1, int(std::ceil(cy + h / 2)));
                int x0 = std::max(0, int(std::floor(cx - w / 2)));
                int x1 = std::min(cfg.width - 1, int(std::ceil(cx + w / 2)));
                const float fa = float(amp);
                for (int y = y0; y <= y1; ++y) {
                    for (int x = x0; x <= x1; ++x) {
                        if (disc) {
                            double dx = (x - cx) / (w / 2), dy = (y - cy) / (h / 2);
                            if (dx * dx + dy * dy > 1.0) continue;
                        }
                        scene.depth.at(y, x) += fa;
                    }
                }
            }
            break;
        }
    }

    double mn = 1e300, mx = -1e300;
    for (float v : scene.depth.data) {
        mn = std::min(mn, double(v));
        mx = std::max(mx, double(v));
    }
    if (mn < 0.0) throw NumericError("depth field went negative");
    if (mx - mn < cfg.min_dynamic_range)
        throw ExhaustedAttempts("scene dynamic range below configured minimum");

    // Appearance is drawn from its own substream: a smooth texture that is
    // deterministic per scene but statistically independent of the depth
    // field, so image features cannot rank point depths.
    Rng arng = Rng::derive(seed, {scene_index, 2});
    scene.appearance = Grid(cfg.height, cfg.width * cfg.channels);
    const double diag = std::hypot(double(cfg.width), double(cfg.height));
    for (int c = 0; c < cfg.channels; ++c) {
        struct Blob {
            double cx, cy, r, a;
        };
        Blob blobs[3];
        for (auto & b : blobs) {
            b.cx = arng.uniform(0.0, double(cfg.width));
            b.cy = arng.uniform(0.0, double(cfg.height));
            b.r = arng.uniform(0.3, 1.0) * diag;
            b.a = arng.uniform(-1.0, 1.0);
        }
        for (int y = 0; y < cfg.height; ++y) {
            for (int x = 0; x < cfg.width; ++x) {
                double v = 0.5;
                for (const auto & b : blobs)
                    v += 0.5 * b.a * std::max(0.0, 1.0 - std::hypot(x - b.cx, y - b.cy) / b.r);
                scene.appearance.at(y, x * cfg.channels + c) =
                    float(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return scene;
}

std::vector<LabeledPoint> sample_points(const Grid & depth, int n,
                                        const SamplingConstraints & c, Rng & rng) {
    c.validate();
    if (n < 1) throw InvalidConfig("need at least one point");
    if (c.x_max >= depth.width || c.y_max >= depth.height)
        throw InvalidConfig("sampling bounds exceed the depth grid");

    std::vector<LabeledPoint> accepted;
    int attempts = 0, since_accept = 0;
    while (int(accepted.size()) < n) {
        if (attempts >= c.max_attempts)
            throw ExhaustedAttempts("point sampling exhausted " + std::to_string(c.max_attempts) +
                                    " attempts");
        ++attempts;
        ++since_accept;
        int x = int(rng.uniform_int(c.x_min, c.x_max));
        int y = int(rng.uniform_int(c.y_min, c.y_max));
        float d = depth.at(y, x);
        bool ok = d != 0.0f;
        for (const auto & p : accepted) {
            if (!ok) break;
            if (std::hypot(double(x - p.x), double(y - p.y)) < c.min_pair_distance) ok = false;
            else if (std::fabs(double(d) - double(p.depth)) < c.min_depth_difference) ok = false;
        }
        if (ok) {
            accepted.push_back({'A', x, y, d});
            since_accept = 0;
        } else if (since_accept > 800) {
            // A greedy dead end: the accepted set blocks completion. Restart.
            accepted.clear();
            since_accept = 0;
        }
    }
    std::sort(accepted.begin(), accepted.end(), [](const LabeledPoint & a, const LabeledPoint & b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    });
    return accepted;
}

void assign_labels(std::vector<LabeledPoint> & points, Rng & rng) {
    std::vector<char> letters;
    for (size_t i = 0; i < points.size(); ++i) letters.push_back(char('A' + i));
    rng.shuffle(letters);
    for (size_t i = 0; i < points.size(); ++i) points[i].label = letters[i];
}

std::vector<int> marker_indices(const std::vector<LabeledPoint> & points) {
    std::vector<size_t> order(points.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&points](size_t a, size_t b) {
        if (points[a].y != points[b].y) return points[a].y < points[b].y;
        return points[a].x < points[b].x;
    });
    std::vector<int> rank(points.size());
    for (size_t r = 0; r < order.size(); ++r) rank[order[r]] = int(r) + 1;
    return rank;
}

Example make_example(const DepthScene & scene, const std::vector<LabeledPoint> & points,
                     PromptStyle style, const std::string & example_id, Rng & rng) {
    (void)rng;
    const int n = int(points.size());
    if (n < 2) throw DataError("example needs at least two points");
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (points[i].depth == points[j].depth)
                throw DataError("exact depth tie between points");

    Example ex;
    ex.example_id = example_id;
    ex.scene_id = scene.scene_id;
    ex.subset = std::to_string(n) + "pt";
    ex.prompt_style = style == PromptStyle::kShort ? "short" : "long";
    ex.points = points;
    ex.depth_target_ref = "grids/" + scene.scene_id;

    float best = points[0].depth;
    ex.answer = points[0].label;
    for (const auto & p : points) {
        if (p.depth > best) {
            best = p.depth;
            ex.answer = p.label;
        }
    }

    auto markers = marker_indices(points);
    std::string t = "Multiple points are circled on the image.";
    for (char letter = 'A'; letter < char('A' + n); ++letter) {
        for (size_t i = 0; i < points.size(); ++i) {
            if (points[i].label != letter) continue;
            t += " Point ";
            t += letter;
            t += " is marker " + std::to_string(markers[i]) + ".";
        }
    }
    t += " Which point is the closest to the camera?";
    if (style == PromptStyle::kLong) {
        t += " Think step by step.";
        std::vector<size_t> by_marker(points.size());
        for (size_t i = 0; i < points.size(); ++i) by_marker[size_t(markers[i]) - 1] = i;
        for (size_t m = 0; m < by_marker.size(); ++m) {
            const auto & p = points[by_marker[m]];
            t += " Marker " + std::to_string(m + 1) + " is at (" + std::to_string(p.x) + ", " +
                 std::to_string(p.y) + ").";
        }
        t += " Read the depth value at each marker from the depth map."
             " Higher depth values are closer to the camera."
             " Answer with the letter of the closest point.";
    }
    ex.prompt_text = t;
    return ex;
}

void write_examples(const std::string & path, const std::vector<Example> & examples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path);
    for (const auto & ex : examples) {
        json points = json::array();
        for (const auto & p : ex.points)
            points.push_back({{"label", std::string(1, p.label)},
                              {"x", p.x},
                              {"y", p.y},
                              {"depth", double(p.depth)}});
        json j = {{"schema_version", kDatasetSchemaVersion},
                  {"example_id", ex.example_id},
                  {"scene_id", ex.scene_id},
                  {"subset", ex.subset},
                  {"prompt_style", ex.prompt_style},
                  {"prompt_text", ex.prompt_text},
                  {"points", points},
                  {"answer", std::string(1, ex.answer)},
                  {"depth_target_ref", ex.depth_target_ref}};
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("short write: " + path);
}

std::vector<Example> read_examples(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    std::vector<Example> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception & e) {
            throw ParseError(e.what(), line_no);
        }
        try {
            int version = j.at("schema_version").get<int>();
            if (version != kDatasetSchemaVersion)
                throw SchemaMismatch("unsupported dataset schema_version " +
                                     std::to_string(version));
            Example ex;
            ex.example_id = j.at("example_id").get<std::string>();
            ex.scene_id = j.at("scene_id").get<std::string>();
            ex.subset = j.at("subset").get<std::string>();
            ex.prompt_style = j.at("prompt_style").get<std::string>();
            ex.prompt_text = j.at("prompt_text").get<std::string>();
            for (const auto & p : j.at("points")) {
                LabeledPoint lp;
                std::string label = p.at("label").get<std::string>();
                if (label.size() != 1) throw ParseError("bad point label", line_no);
                lp.label = label[0];
                lp.x = p.at("x").get<int>();
                lp.y = p.at("y").get<int>();
                lp.depth = float(p.at("depth").get<double>());
                ex.points.push_back(lp);
            }
            std::string ans = j.at("answer").get<std::string>();
            if (ans.size() != 1) throw ParseError("bad answer", line_no);
            ex.answer = ans[0];
            ex.depth_target_ref = j.at("depth_target_ref").get<std::string>();
            out.push_back(std::move(ex));
        } catch (const json::exception & e) {
            throw ParseError(e.what(), line_no);
        }
    }
    return out;
}

void save_scene_grids(const std::string & dir, const DepthScene & scene) {
    fs::create_directories(fs::path(dir) / "grids");
    write_grid((fs::path(dir) / "grids" / (scene.scene_id + ".depth.trtd")).string(), scene.depth);
    write_grid((fs::path(dir) / "grids" / (scene.scene_id + ".appearance.trtd")).string(),
               scene.appearance);
}

void write_dataset_meta(const std::string & dir, const DatasetMeta & meta) {
    json j = {{"schema_version", kDatasetSchemaVersion},
              {"width", meta.width},
              {"height", meta.height},
              {"channels", meta.channels}};
    std::ofstream out(fs::path(dir) / "dataset_meta.json", std::ios::binary);
    if (!out) throw DataError("cannot write dataset_meta.json in " + dir);
    out << j.dump(2) << '\n';
}

DatasetMeta read_dataset_meta(const std::string & dir) {
    std::ifstream in(fs::path(dir) / "dataset_meta.json", std::ios::binary);
    if (!in) throw DataError("missing dataset_meta.json in " + dir);
    json j;
    try {
        in >> j;
        DatasetMeta m;
        m.width = j.at("width").get<int>();
        m.height = j.at("height").get<int>();
        m.channels = j.at("channels").get<int>();
        return m;
    } catch (const json::exception & e) {
        throw SchemaMismatch(std::string("bad dataset_meta.json: ") + e.what());
    }
}

GenStats generate_dataset(const GenConfig & cfg, const std::string & out_dir,
                          const std::function<void(const std::string &)> & log) {
    cfg.scene.validate();
    cfg.sampling.validate();
    fs::create_directories(out_dir);

    int remaining[3] = {cfg.n3, cfg.n4, cfg.n5};
    GenStats stats;
    std::vector<Example> examples;
    uint64_t scene_index = 0;
    int rr = 0;
    while (remaining[0] + remaining[1] + remaining[2] > 0) {
        if (cfg.max_scenes != 0 && scene_index >= cfg.max_scenes)
            throw DataError("scene budget exhausted before subset quotas were met");
        int pick = -1;
        for (int k = 0; k < 3; ++k) {
            int cand = (rr + k) % 3;
            if (remaining[cand] > 0) {
                pick = cand;
                break;
            }
        }
        rr = (pick + 1) % 3;
        const int n = 3 + pick;

        DepthScene scene;
        std::vector<LabeledPoint> pts;
        try {
            scene = generate_scene(cfg.seed, scene_index, cfg.scene);
            Rng prng = Rng::derive(cfg.seed, {scene_index, 3});
            pts = sample_points(scene.depth, n, cfg.sampling, prng);
        } catch (const ExhaustedAttempts &) {
            ++stats.skipped_scenes;
            if (log) log("skipped " + scene.scene_id + " (" + std::to_string(n) +
                         " points, attempts exhausted)");
            ++scene_index;
            continue;
        }
        Rng lrng = Rng::derive(cfg.seed, {scene_index, 4});
        assign_labels(pts, lrng);

        char idbuf[32];
        snprintf(idbuf, sizeof idbuf, "ex%06d", stats.written);
        Rng erng = Rng::derive(cfg.seed, {scene_index, 5});
        examples.push_back(make_example(scene, pts, cfg.style, idbuf, erng));
        save_scene_grids(out_dir, scene);
        --remaining[pick];
        ++stats.written;
        ++scene_index;
    }
    write_examples((fs::path(out_dir) / "dataset.jsonl").string(), examples);
    DatasetMeta meta{cfg.scene.width, cfg.scene.height, cfg.scene.channels};
    write_dataset_meta(out_dir, meta);
    return stats;
}

void validate_example(const Example & ex, const Grid & depth, const SamplingConstraints & c) {
    const int n = int(ex.points.size());
    if (n < 3 || n > 5) throw DataError(ex.example_id + ": bad point count");
    if (ex.subset != std::to_string(n) + "pt") throw DataError(ex.example_id + ": subset mismatch");
    std::vector<bool> seen(size_t(n), false);
    char best_label = 0;
    float best = -1.0f;
    for (const auto & p : ex.points) {
        if (p.x < c.x_min || p.x > c.x_max || p.y < c.y_min || p.y > c.y_max)
            throw DataError(ex.example_id + ": point out of bounds");
        if (p.label < 'A' || p.label >= char('A' + n))
            throw DataError(ex.example_id + ": bad label");
        if (seen[size_t(p.label - 'A')]) throw DataError(ex.example_id + ": duplicate label");
        seen[size_t(p.label - 'A')] = true;
        float d = depth.at(p.y, p.x);
        if (d != p.depth) throw DataError(ex.example_id + ": stored depth mismatch");
        if (d == 0.0f) throw DataError(ex.example_id + ": zero depth at point");
        if (d > best) {
            best = d;
            best_label = p.label;
        }
    }
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const auto & a = ex.points[size_t(i)];
            const auto & b = ex.points[size_t(j)];
            if (std::hypot(double(a.x - b.x), double(a.y - b.y)) < c.min_pair_distance)
                throw DataError(ex.example_id + ": pair distance violated");
            if (std::fabs(double(a.depth) - double(b.depth)) < c.min_depth_difference)
                throw DataError(ex.example_id + ": depth difference violated");
        }
    }
    if (ex.answer != best_label) throw DataError(ex.example_id + ": answer is not the max-depth label");
}

} // namespace trtlab

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "trtlab/grid.hpp"
#include "trtlab/rng.hpp"

namespace trtlab {

// Synthetic depth scenes: a smooth base field (sum of radial gradient
// components, affinely normalized to [base_min, base_max]) plus
// piecewise-constant plateau objects with sign-symmetric amplitudes.
// Convention: larger depth value = closer to the camera, range [0, 255].
struct SceneConfig {
    int width = 336;
    int height = 336;
    int channels = 3;

    int gradient_components = 3;
    double radius_min = 0.8; // in units of the image diagonal
    double radius_max = 2.5;
    double center_dist_min = 0.2; // component center distance, units of radius
    double center_dist_max = 0.6;
    double base_min = 60.0;
    double base_max = 200.0;

    int plateaus_min = 2;
    int plateaus_max = 5;
    double plateau_amp_min = 25.0; // sign drawn at random per object
    double plateau_amp_max = 55.0;
    double plateau_size_min = 0.10; // fraction of min(width, height)
    double plateau_size_max = 0.35;

    double min_dynamic_range = 60.0;

    void validate() const; // throws InvalidConfig
};

struct SamplingConstraints {
    int x_min = 10, x_max = 324;
    int y_min = 95, y_max = 224;
    double min_pair_distance = 20.0;   // pixels, euclidean
    double min_depth_difference = 20.0;
    int max_attempts = 10000;

    void validate() const;
};

struct DepthScene {
    std::string scene_id;
    Grid depth;      // height x width
    Grid appearance; // height x (width*channels), depth-decorrelated texture
    int channels = 3;
};

struct LabeledPoint {
    char label = 'A';
    int x = 0, y = 0;
    float depth = 0.0f;
};

inline constexpr int kDatasetSchemaVersion = 1;

struct Example {
    std::string example_id;
    std::string scene_id;
    std::string subset;       // "3pt" | "4pt" | "5pt"
    std::string prompt_style; // "short" | "long"
    std::string prompt_text;
    std::vector<LabeledPoint> points; // sorted by depth ascending
    char answer = 'A';                // label of the max-depth point
    std::string depth_target_ref;     // e.g. "grids/sc000042"
};

// The smooth component alone; generate_scene's depth field equals this plus
// the plateau objects, so a zero-amplitude config reproduces it exactly.
Grid base_field(uint64_t seed, uint64_t scene_index, const SceneConfig & cfg);

DepthScene generate_scene(uint64_t seed, uint64_t scene_index, const SceneConfig & cfg);

// Rejection-samples n points subject to the constraints: coordinates inside
// the bounds, depth nonzero at the point, pairwise distance and pairwise
// depth difference at least the minima. Every proposal counts against
// max_attempts; throws ExhaustedAttempts when the budget runs out. The
// result is sorted by depth ascending.
std::vector<LabeledPoint> sample_points(const Grid & depth, int n,
                                        const SamplingConstraints & constraints, Rng & rng);

// Assigns shuffled letters A.. to depth-sorted points so alphabetical order
// carries no depth information.
void assign_labels(std::vector<LabeledPoint> & points, Rng & rng);

// Canonical marker order: ranks by (y, x). Returns, for each element of
// points, its 1-based marker index. This order is label-free by construction.
std::vector<int> marker_indices(const std::vector<LabeledPoint> & points);

enum class PromptStyle { kShort, kLong };

// Builds the example (prompt text, subset tag, answer). rng is part of the
// signature for template variation but current templates are deterministic.
// Throws DataError on an exact depth tie.
Example make_example(const DepthScene & scene, const std::vector<LabeledPoint> & points,
                     PromptStyle style, const std::string & example_id, Rng & rng);

// JSONL dataset file.
void write_examples(const std::string & path, const std::vector<Example> & examples);
std::vector<Example> read_examples(const std::string & path);

// Scene sidecars: <dir>/grids/<scene_id>.depth.trtd and .appearance.trtd.
void save_scene_grids(const std::string & dir, const DepthScene & scene);

struct DatasetMeta {
    int width = 336, height = 336, channels = 3;
};
void write_dataset_meta(const std::string & dir, const DatasetMeta & meta);
DatasetMeta read_dataset_meta(const std::string & dir);

struct GenConfig {
    uint64_t seed = 0;
    int n3 = 124, n4 = 124, n5 = 124; // examples per subset
    uint64_t max_scenes = 0;          // 0 = unlimited
    SceneConfig scene;
    SamplingConstraints sampling;
    PromptStyle style = PromptStyle::kShort;
};

struct GenStats {
    int written = 0;
    int skipped_scenes = 0;
};

// Generates one scene per example, cycling subsets until quotas fill; scenes
// whose sampling exhausts the attempt budget are skipped and logged. Writes
// dataset.jsonl, dataset_meta.json and grid sidecars under out_dir.
GenStats generate_dataset(const GenConfig & cfg, const std::string & out_dir,
                          const std::function<void(const std::string &)> & log = nullptr);

// Brute-force re-validation used by tests: re-checks every sampling
// constraint and the answer against the depth grid.
void validate_example(const Example & ex, const Grid & depth, const SamplingConstraints & c);

} // namespace trtlab

#include "trtlab/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "trtlab/depth_targets.hpp"
#include "trtlab/errors.hpp"
#include "trtlab/eval.hpp"
#include "trtlab/features.hpp"
#include "trtlab/manifest.hpp"
#include "trtlab/model.hpp"
#include "trtlab/rng.hpp"
#include "trtlab/scenegen.hpp"
#include "trtlab/training.hpp"
#include "trtlab/trt.hpp"
#include "trtlab/vocab.hpp"

namespace trtlab {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Name <-> enum helpers for flag values
// ---------------------------------------------------------------------------

PromptStyle parse_prompt_style(const std::string & name)
{
    if (name == "short") return PromptStyle::kShort;
    if (name == "long") return PromptStyle::kLong;
    throw UsageError("unknown prompt style '" + name + "' (expected short or long)");
}

const char * prompt_style_name(PromptStyle style)
{
    return style == PromptStyle::kLong ? "long" : "short";
}

DepthLossKind parse_depth_loss(const std::string & name)
{
    if (name == "mse") return DepthLossKind::kMse;
    if (name == "cosine") return DepthLossKind::kCosine;
    if (name == "ce") return DepthLossKind::kCrossEntropy;
    throw UsageError("unknown depth loss '" + name + "' (expected mse, cosine, or ce)");
}

const char * depth_loss_name(DepthLossKind kind)
{
    switch (kind) {
    case DepthLossKind::kMse: return "mse";
    case DepthLossKind::kCosine: return "cosine";
    case DepthLossKind::kCrossEntropy: return "ce";
    }
    return "mse";
}

SpanPooling parse_pooling(const std::string & name)
{
    if (name == "span_scalar") return SpanPooling::kSpanScalar;
    if (name == "per_dimension") return SpanPooling::kPerDimension;
    if (name == "per_vector") return SpanPooling::kPerVector;
    throw UsageError("unknown pooling '" + name +
                     "' (expected span_scalar, per_dimension, or per_vector)");
}

// ---------------------------------------------------------------------------
// Config serialization, used for the training config echo and run manifests
// ---------------------------------------------------------------------------

json scene_to_json(const SceneConfig & c)
{
    return json{{"width", c.width},
                {"height", c.height},
                {"channels", c.channels},
                {"gradient_components", c.gradient_components},
                {"radius_min", c.radius_min},
                {"radius_max", c.radius_max},
                {"center_dist_min", c.center_dist_min},
                {"center_dist_max", c.center_dist_max},
                {"base_min", c.base_min},
                {"base_max", c.base_max},
                {"plateaus_min", c.plateaus_min},
                {"plateaus_max", c.plateaus_max},
                {"plateau_amp_min", c.plateau_amp_min},
                {"plateau_amp_max", c.plateau_amp_max},
                {"plateau_size_min", c.plateau_size_min},
                {"plateau_size_max", c.plateau_size_max},
                {"min_dynamic_range", c.min_dynamic_range}};
}

json sampling_to_json(const SamplingConstraints & c)
{
    return json{{"x_min", c.x_min},
                {"x_max", c.x_max},
                {"y_min", c.y_min},
                {"y_max", c.y_max},
                {"min_pair_distance", c.min_pair_distance},
                {"min_depth_difference", c.min_depth_difference},
                {"max_attempts", c.max_attempts}};
}

json gen_to_json(const GenConfig & c)
{
    return json{{"seed", c.seed},
                {"n3", c.n3},
                {"n4", c.n4},
                {"n5", c.n5},
                {"max_scenes", c.max_scenes},
                {"scene", scene_to_json(c.scene)},
                {"sampling", sampling_to_json(c.sampling)},
                {"style", prompt_style_name(c.style)}};
}

json model_to_json(const ModelConfig & c)
{
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

json targets_to_json(const TargetConfig & c)
{
    return json{{"patch_rows", c.patch_rows},
                {"patch_cols", c.patch_cols},
                {"dim", c.dim},
                {"projection_seed", c.projection_seed},
                {"normalization",
                 c.normalization == TargetConfig::Normalization::kUnitNorm ? "unit" : "none"},
                {"discrete", c.discrete},
                {"discrete_tokens", c.discrete_tokens},
                {"codebook_size", c.codebook_size}};
}

TargetConfig targets_from_json(const json & j)
{
    TargetConfig c;
    c.patch_rows = j.at("patch_rows").get<int>();
    c.patch_cols = j.at("patch_cols").get<int>();
    c.dim = j.at("dim").get<int>();
    c.projection_seed = j.at("projection_seed").get<uint64_t>();
    const std::string norm = j.at("normalization").get<std::string>();
    if (norm == "unit") {
        c.normalization = TargetConfig::Normalization::kUnitNorm;
    } else if (norm == "none") {
        c.normalization = TargetConfig::Normalization::kNone;
    } else {
        throw SchemaMismatch("unknown normalization '" + norm + "'");
    }
    c.discrete = j.at("discrete").get<bool>();
    c.discrete_tokens = j.at("discrete_tokens").get<int>();
    c.codebook_size = j.at("codebook_size").get<int>();
    return c;
}

json image_to_json(const ImageInterfaceConfig & c)
{
    return json{{"slot_tokens", c.slot_tokens},
                {"strip_tokens", c.strip_tokens},
                {"features", c.features},
                {"bump_sigma", c.bump_sigma},
                {"leak_depth", c.leak_depth}};
}

ImageInterfaceConfig image_from_json(const json & j)
{
    ImageInterfaceConfig c;
    c.slot_tokens = j.at("slot_tokens").get<int>();
    c.strip_tokens = j.at("strip_tokens").get<int>();
    c.features = j.at("features").get<int>();
    c.bump_sigma = j.at("bump_sigma").get<double>();
    c.leak_depth = j.at("leak_depth").get<bool>();
    return c;
}

json train_to_json(const TrainConfig & c)
{
    return json{{"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"lr", c.lr},
                {"warmup_frac", c.warmup_frac},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"adam_eps", c.adam_eps},
                {"lambda", c.lambda},
                {"depth_loss", depth_loss_name(c.depth_loss)},
                {"init_seed", c.init_seed}};
}

std::string json_hash(const json & j)
{
    const std::string dumped = j.dump();
    return hex_fingerprint(fnv1a(dumped.data(), dumped.size()));
}

inline constexpr int kTrainConfigSchemaVersion = 1;
inline constexpr const char * kTrainConfigName = "train_config.json";

void write_train_config(const fs::path & path, const TrainSetup & setup,
                        const std::string & depth_mode, const std::string & regime)
{
    json j;
    j["schema_version"] = kTrainConfigSchemaVersion;
    j["depth_mode"] = depth_mode;
    j["regime"] = regime;
    j["model"] = model_to_json(setup.model);
    j["targets"] = targets_to_json(setup.targets);
    j["image"] = image_to_json(setup.image);
    j["train"] = train_to_json(setup.train);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path.string());
    f << j.dump(2) << "\n";
}

json read_train_config(const fs::path & path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw DataError("missing " + path.string() +
                        " (expected next to the checkpoint; produced by train)");
    }
    json j;
    try {
        f >> j;
        if (j.at("schema_version").get<int>() != kTrainConfigSchemaVersion) {
            throw SchemaMismatch(path.string() + ": unsupported schema version");
        }
    } catch (const json::exception & e) {
        throw SchemaMismatch(path.string() + ": " + e.what());
    }
    return j;
}

struct WallTimer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const
    {
        const auto dt = std::chrono::steady_clock::now() - start;
        return std::chrono::duration<double>(dt).count();
    }
};

std::vector<std::string> split_csv(const std::string & text)
{
    std::vector<std::string> parts;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, ',')) parts.push_back(item);
    return parts;
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

struct GenArgs {
    std::string out;
    uint64_t seed = 0;
    std::string subset_sizes = "124,124,124";
    uint64_t n_scenes = 0;
    int width = 336;
    int height = 336;
    double min_depth_diff = 20.0;
    double min_pair_dist = 20.0;
    int max_attempts = 10000;
    std::string prompt_style = "short";
};

int cmd_gen(const GenArgs & a, const std::vector<std::string> & argv, std::ostream & out)
{
    GenConfig cfg;
    cfg.seed = a.seed;
    const std::vector<std::string> sizes = split_csv(a.subset_sizes);
    if (sizes.size() != 3) {
        throw UsageError("--subset-sizes expects three comma-separated counts, got '" +
                         a.subset_sizes + "'");
    }
    try {
        cfg.n3 = std::stoi(sizes[0]);
        cfg.n4 = std::stoi(sizes[1]);
        cfg.n5 = std::stoi(sizes[2]);
    } catch (const std::exception &) {
        throw UsageError("--subset-sizes expects integers, got '" + a.subset_sizes + "'");
    }
    if (cfg.n3 < 0 || cfg.n4 < 0 || cfg.n5 < 0) {
        throw UsageError("--subset-sizes counts must be nonnegative");
    }
    cfg.max_scenes = a.n_scenes;
    cfg.scene.width = a.width;
    cfg.scene.height = a.height;
    const SamplingConstraints ref;
    cfg.sampling.x_min = (ref.x_min * a.width) / 336;
    cfg.sampling.x_max = (ref.x_max * a.width) / 336;
    cfg.sampling.y_min = (ref.y_min * a.height) / 336;
    cfg.sampling.y_max = (ref.y_max * a.height) / 336;
    cfg.sampling.min_depth_difference = a.min_depth_diff;
    cfg.sampling.min_pair_distance = a.min_pair_dist;
    cfg.sampling.max_attempts = a.max_attempts;
    cfg.style = parse_prompt_style(a.prompt_style);

    WallTimer timer;
    fs::create_directories(a.out);
    const GenStats stats =
        generate_dataset(cfg, a.out, [&out](const std::string & msg) { out << msg << "\n"; });
    out << "wrote " << stats.written << " examples to " << a.out << " ("
        << stats.skipped_scenes << " scenes skipped)\n";

    RunManifest m;
    m.command = "gen";
    m.argv = argv;
    m.config_hashes["gen"] = json_hash(gen_to_json(cfg));
    m.seeds["master"] = cfg.seed;
    m.artifacts = {"dataset.jsonl", "dataset_meta.json", "grids"};
    m.wall_seconds = timer.seconds();
    write_manifest(m, (fs::path(a.out) / kManifestName).string());
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string out;
    uint64_t seed = 1;
    std::string regime = "bottleneck";
    std::string depth_mode = "continuous";
    int k = 4;
    int d = 8;
    int codebook = 64;
    double lambda_depth = 1.0;
    std::string depth_loss = "mse";
    int depth_loss_layer = -1;
    bool leak_depth = false;
    int epochs = 10;
    int batch = 8;
    double lr = 3e-4;
    double warmup = 0.03;
    int width = 128;
    int layers = 4;
    int heads = 4;
    int ffn = 512;
    int context = 512;
};

struct TrainFlagCounts {
    bool lambda_given = false;
    bool leak_given = false;
    bool loss_given = false;
    bool codebook_given = false;
};

void factor_span_tokens(int k, TargetConfig & targets)
{
    if (k < 1) throw UsageError("--k must be positive");
    const int side = int(std::lround(std::sqrt(double(k))));
    if (side * side == k) {
        targets.patch_rows = side;
        targets.patch_cols = side;
    } else {
        targets.patch_rows = 1;
        targets.patch_cols = k;
    }
}

int cmd_train(const TrainArgs & a, const TrainFlagCounts & given,
              const std::vector<std::string> & argv, std::ostream & out)
{
    TrainSetup setup;
    setup.model.layers = a.layers;
    setup.model.width = a.width;
    setup.model.heads = a.heads;
    setup.model.ffn = a.ffn;
    setup.model.context = a.context;
    setup.model.depth_loss_layer = a.depth_loss_layer;
    setup.model.target_dim = a.d;

    factor_span_tokens(a.k, setup.targets);
    setup.targets.dim = a.d;
    setup.targets.codebook_size = a.codebook;

    setup.train.epochs = a.epochs;
    setup.train.batch_size = a.batch;
    setup.train.lr = a.lr;
    setup.train.warmup_frac = a.warmup;
    setup.train.lambda = a.lambda_depth;
    setup.train.init_seed = a.seed;
    setup.image.leak_depth = a.leak_depth;

    if (a.regime == "leakage") {
        if (!given.leak_given) setup.image.leak_depth = true;
    } else if (a.regime == "no-aux") {
        if (!given.lambda_given) setup.train.lambda = 0.0;
    } else if (a.regime != "bottleneck") {
        throw UsageError("unknown regime '" + a.regime +
                         "' (expected bottleneck, leakage, or no-aux)");
    }

    if (a.depth_mode == "continuous") {
        setup.targets.discrete = false;
        setup.train.depth_loss = parse_depth_loss(a.depth_loss);
        if (setup.train.depth_loss == DepthLossKind::kCrossEntropy) {
            throw UsageError("cross-entropy depth loss requires --depth-mode discrete");
        }
    } else if (a.depth_mode == "discrete") {
        setup.targets.discrete = true;
        setup.targets.discrete_tokens = a.k;
        setup.train.depth_loss = DepthLossKind::kCrossEntropy;
        if (given.loss_given && parse_depth_loss(a.depth_loss) != DepthLossKind::kCrossEntropy) {
            throw UsageError("discrete depth mode always uses the cross-entropy depth loss");
        }
    } else if (a.depth_mode == "none") {
        setup.targets.discrete = false;
        setup.train.depth_loss = parse_depth_loss(a.depth_loss);
        if (given.lambda_given && a.lambda_depth != 0.0) {
            throw UsageError("--depth-mode none disables the depth loss; --lambda-depth "
                             "must be 0 or omitted");
        }
        setup.train.lambda = 0.0;
    } else {
        throw UsageError("unknown depth mode '" + a.depth_mode +
                         "' (expected continuous, discrete, or none)");
    }
    if (given.codebook_given && a.depth_mode != "discrete") {
        throw UsageError("--codebook only applies with --depth-mode discrete");
    }

    setup.model.image_tokens = setup.image.tokens();
    setup.model.image_features = setup.image.features;

    WallTimer timer;
    fs::create_directories(a.out);
    const TrainResult result = train_model(setup, a.data, a.out, [&out](const EpochLog & log) {
        char line[160];
        snprintf(line, sizeof line,
                 "epoch %3d  lm %.4f  depth %.4f  total %.4f  acc %5.1f%%  %ld ms", log.epoch,
                 log.l_lm, log.l_depth, log.total, 100.0 * log.train_acc, log.wall_ms);
        out << line << "\n";
    });
    setup.model.vocab = result.vocab_size;
    write_train_config(fs::path(a.out) / kTrainConfigName, setup, a.depth_mode, a.regime);
    out << "final checkpoint: " << result.final_checkpoint << "\n";

    RunManifest m;
    m.command = "train";
    m.argv = argv;
    m.config_hashes["model"] = json_hash(model_to_json(setup.model));
    m.config_hashes["targets"] = json_hash(targets_to_json(setup.targets));
    m.config_hashes["image"] = json_hash(image_to_json(setup.image));
    m.config_hashes["train"] = json_hash(train_to_json(setup.train));
    m.seeds["init"] = setup.train.init_seed;
    m.seeds["projection"] = setup.targets.projection_seed;
    m.artifacts.push_back(kTrainConfigName);
    m.artifacts.push_back("train_log.jsonl");
    for (int epoch = 1; epoch <= setup.train.epochs; ++epoch) {
        char name[32];
        snprintf(name, sizeof name, "checkpoint_ep%03d.trtm", epoch);
        m.artifacts.push_back(name);
    }
    m.artifacts.push_back("final.trtm");
    if (!result.codebook_path.empty()) {
        m.artifacts.push_back(fs::path(result.codebook_path).filename().string());
    }
    m.wall_seconds = timer.seconds();
    write_manifest(m, (fs::path(a.out) / kManifestName).string());
    return 0;
}

// ---------------------------------------------------------------------------
// trt
// ---------------------------------------------------------------------------

struct TrtArgs {
    std::string checkpoint;
    std::string data;
    std::string out;
    std::string interventions = "identity,zero,random,oracle";
    std::string suite;
    std::string span_source = "dataset";
    bool kv_off = false;
    bool count_matched = false;
    uint64_t seed = 0;
    std::string pooling = "span_scalar";
    int budget = 0;
    int limit = 0;
    double theta_hurt = 5.0;
    double theta_help = 5.0;
    double theta_same = 1.0;
};

json suite_to_json(const std::vector<Intervention> & ivs)
{
    json arr = json::array();
    for (const Intervention & iv : ivs) {
        arr.push_back(json{{"kind", intervention_name(iv.kind)},
                           {"count_matched", iv.count_matched},
                           {"kv_off", iv.kv_off},
                           {"seed", iv.seed}});
    }
    return arr;
}

int cmd_trt(const TrtArgs & a, const std::vector<std::string> & argv, std::ostream & out)
{
    const fs::path checkpoint_dir = fs::path(a.checkpoint).parent_path();
    const json tc = read_train_config(checkpoint_dir / kTrainConfigName);
    TargetConfig targets;
    ImageInterfaceConfig image;
    try {
        targets = targets_from_json(tc.at("targets"));
        image = image_from_json(tc.at("image"));
    } catch (const json::exception & e) {
        throw SchemaMismatch(std::string(kTrainConfigName) + ": " + e.what());
    }

    const Model model = load_checkpoint(a.checkpoint);
    const Vocabulary vocab = Vocabulary::build(targets.discrete ? targets.codebook_size : 0);
    if (vocab.size() != model.cfg.vocab) {
        throw SchemaMismatch("checkpoint vocab " + std::to_string(model.cfg.vocab) +
                             " does not match the configured vocabulary of " +
                             std::to_string(vocab.size()));
    }
    Codebook codebook;
    const Codebook * codebook_ptr = nullptr;
    if (targets.discrete) {
        codebook = read_codebook((checkpoint_dir / "codebook.trtc").string());
        codebook_ptr = &codebook;
    }

    std::vector<Intervention> interventions;
    if (!a.suite.empty()) {
        interventions = read_suite_spec(a.suite);
    } else {
        for (const std::string & name : split_csv(a.interventions)) {
            Intervention iv;
            iv.kind = parse_intervention_name(name);
            interventions.push_back(iv);
        }
    }

    SuiteOptions options;
    options.span_source = parse_span_source(a.span_source);
    options.suite_seed = a.seed;
    options.discrete = targets.discrete;
    options.kv_off = a.kv_off;
    options.count_matched = a.count_matched;
    options.pooling = parse_pooling(a.pooling);
    options.response_budget = a.budget;
    options.checkpoint_label = a.checkpoint;
    options.dataset_label = a.data;

    std::vector<Example> examples = read_examples((fs::path(a.data) / "dataset.jsonl").string());
    if (a.limit > 0 && size_t(a.limit) < examples.size()) examples.resize(size_t(a.limit));
    const DatasetMeta meta = read_dataset_meta(a.data);
    std::vector<PreparedExample> prepared;
    prepared.reserve(examples.size());
    for (const Example & ex : examples) {
        prepared.push_back(prepare_example(ex, a.data, meta, vocab, targets, image, codebook_ptr));
    }

    WallTimer timer;
    fs::create_directories(a.out);
    TRTReport report = run_suite(model, vocab, prepared, interventions, options,
                                 (fs::path(a.out) / "audit.jsonl").string());

    std::set<InterventionKind> kinds;
    for (const Intervention & iv : interventions) kinds.insert(iv.kind);
    const bool has_identity = kinds.count(InterventionKind::kIdentity) > 0;
    const bool has_control = kinds.count(InterventionKind::kZero) > 0 ||
                             kinds.count(InterventionKind::kRandom) > 0;
    if (has_identity && has_control) {
        SignatureThresholds thresholds;
        thresholds.hurt = a.theta_hurt;
        thresholds.help = a.theta_help;
        thresholds.same = a.theta_same;
        report.verdict = classify_signature(report.rows, thresholds);
        report.has_verdict = true;
    }

    write_report_json(report, (fs::path(a.out) / "report.json").string());
    write_report_csv(report, (fs::path(a.out) / "report.csv").string());
    out << render_report_text(report);

    RunManifest m;
    m.command = "trt";
    m.argv = argv;
    m.config_hashes["suite"] = json_hash(suite_to_json(interventions));
    m.config_hashes["options"] =
        json_hash(json{{"span_source", span_source_name(options.span_source)},
                       {"kv_off", options.kv_off},
                       {"count_matched", options.count_matched},
                       {"pooling", a.pooling},
                       {"response_budget", options.response_budget},
                       {"limit", a.limit},
                       {"theta_hurt", a.theta_hurt},
                       {"theta_help", a.theta_help},
                       {"theta_same", a.theta_same}});
    m.seeds["suite"] = options.suite_seed;
    m.artifacts = {"report.json", "report.csv", "audit.jsonl"};
    m.wall_seconds = timer.seconds();
    write_manifest(m, (fs::path(a.out) / kManifestName).string());
    return 0;
}

// ---------------------------------------------------------------------------
// report and replay
// ---------------------------------------------------------------------------

struct ReportArgs {
    std::string report;
    double theta_hurt = 5.0;
    double theta_help = 5.0;
    double theta_same = 1.0;
    bool thetas_given = false;
};

int cmd_report(const ReportArgs & a, std::ostream & out)
{
    TRTReport report = read_report_json(a.report);
    if (!report.has_verdict || a.thetas_given) {
        SignatureThresholds thresholds;
        thresholds.hurt = a.theta_hurt;
        thresholds.help = a.theta_help;
        thresholds.same = a.theta_same;
        report.verdict = classify_signature(report.rows, thresholds);
        report.has_verdict = true;
    }
    out << render_report_text(report);
    return 0;
}

int cmd_replay(const std::string & manifest_path, std::ostream & out)
{
    const RunManifest m = read_manifest(manifest_path);
    if (m.command == "replay") throw DataError("refusing to replay a replay manifest");
    if (m.argv.empty()) throw DataError(manifest_path + ": manifest records no arguments");
    out << "replaying " << m.command << " from " << manifest_path << "\n";
    return run_cli(m.argv, out);
}

} // namespace

int run_cli(const std::vector<std::string> & args, std::ostream & out)
{
    CLI::App app{"depth span replacement laboratory"};
    app.name("trtlab");
    app.require_subcommand(1);

    GenArgs g;
    CLI::App * gen = app.add_subcommand("gen", "generate a synthetic depth-reasoning dataset");
    gen->add_option("--out", g.out, "output dataset directory")->required();
    gen->add_option("--seed", g.seed, "master generation seed");
    gen->add_option("--subset-sizes", g.subset_sizes, "examples per subset as n3,n4,n5");
    gen->add_option("--n-scenes", g.n_scenes, "scene budget, 0 for unlimited");
    gen->add_option("--width", g.width, "scene width in pixels");
    gen->add_option("--height", g.height, "scene height in pixels");
    gen->add_option("--min-depth-diff", g.min_depth_diff, "minimum pairwise depth difference");
    gen->add_option("--min-pair-dist", g.min_pair_dist, "minimum pairwise pixel distance");
    gen->add_option("--max-attempts", g.max_attempts, "point sampling attempt budget per scene");
    gen->add_option("--prompt-style", g.prompt_style, "prompt wording, short or long");

    TrainArgs t;
    CLI::App * train = app.add_subcommand("train", "train a model on a generated dataset");
    train->add_option("--data", t.data, "dataset directory")->required();
    train->add_option("--out", t.out, "output directory for checkpoints and logs")->required();
    train->add_option("--seed", t.seed, "weight initialization seed");
    train->add_option("--regime", t.regime, "preset: bottleneck, leakage, or no-aux");
    train->add_option("--depth-mode", t.depth_mode, "span kind: continuous, discrete, or none");
    train->add_option("--k", t.k, "depth span token count");
    train->add_option("--d", t.d, "depth target dimension");
    CLI::Option * opt_codebook =
        train->add_option("--codebook", t.codebook, "codebook size for discrete spans");
    CLI::Option * opt_lambda =
        train->add_option("--lambda-depth", t.lambda_depth, "depth loss weight");
    CLI::Option * opt_loss =
        train->add_option("--depth-loss", t.depth_loss, "continuous depth loss, mse or cosine");
    train->add_option("--depth-loss-layer", t.depth_loss_layer,
                      "hidden layer the depth head reads, -1 for the last");
    CLI::Option * opt_leak =
        train->add_flag("--leak-depth", t.leak_depth, "append depth values to image features");
    train->add_option("--epochs", t.epochs, "training epochs");
    train->add_option("--batch", t.batch, "batch size");
    train->add_option("--lr", t.lr, "peak learning rate");
    train->add_option("--warmup", t.warmup, "warmup fraction of total steps");
    train->add_option("--width", t.width, "model width");
    train->add_option("--layers", t.layers, "transformer layers");
    train->add_option("--heads", t.heads, "attention heads");
    train->add_option("--ffn", t.ffn, "feed-forward width");
    train->add_option("--context", t.context, "context length");

    TrtArgs r;
    CLI::App * trt = app.add_subcommand("trt", "run the span replacement suite");
    trt->add_option("--checkpoint", r.checkpoint, "model checkpoint file")->required();
    trt->add_option("--data", r.data, "dataset directory")->required();
    trt->add_option("--out", r.out, "output directory for the report")->required();
    trt->add_option("--interventions", r.interventions, "comma-separated intervention names");
    trt->add_option("--suite", r.suite, "suite spec file, overrides --interventions");
    trt->add_option("--span-source", r.span_source, "baseline span source, dataset or self");
    trt->add_flag("--kv-off", r.kv_off, "disable the decode cache for every run");
    trt->add_flag("--count-matched", r.count_matched, "match replacement lengths to the baseline");
    trt->add_option("--seed", r.seed, "suite randomness seed");
    trt->add_option("--pooling", r.pooling,
                    "statistics pooling: span_scalar, per_dimension, or per_vector");
    trt->add_option("--budget", r.budget, "response token budget, 0 derives from span length");
    trt->add_option("--limit", r.limit, "cap on examples, 0 for all");
    trt->add_option("--theta-hurt", r.theta_hurt, "verdict threshold: control drop");
    trt->add_option("--theta-help", r.theta_help, "verdict threshold: oracle gain");
    trt->add_option("--theta-same", r.theta_same, "verdict threshold: equivalence margin");

    ReportArgs p;
    CLI::App * report = app.add_subcommand("report", "render a stored report");
    report->add_option("--report", p.report, "report.json path")->required();
    CLI::Option * rep_hurt =
        report->add_option("--theta-hurt", p.theta_hurt, "verdict threshold: control drop");
    CLI::Option * rep_help =
        report->add_option("--theta-help", p.theta_help, "verdict threshold: oracle gain");
    CLI::Option * rep_same =
        report->add_option("--theta-same", p.theta_same, "verdict threshold: equivalence margin");

    std::string manifest_path;
    CLI::App * replay = app.add_subcommand("replay", "re-run a recorded command");
    replay->add_option("--manifest", manifest_path, "run manifest file")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
        if (gen->parsed()) return cmd_gen(g, args, out);
        if (train->parsed()) {
            TrainFlagCounts given;
            given.lambda_given = opt_lambda->count() > 0;
            given.leak_given = opt_leak->count() > 0;
            given.loss_given = opt_loss->count() > 0;
            given.codebook_given = opt_codebook->count() > 0;
            return cmd_train(t, given, args, out);
        }
        if (trt->parsed()) return cmd_trt(r, args, out);
        if (report->parsed()) {
            p.thetas_given = rep_hurt->count() > 0 || rep_help->count() > 0 ||
                             rep_same->count() > 0;
            return cmd_report(p, out);
        }
        if (replay->parsed()) return cmd_replay(manifest_path, out);
        return 0;
    } catch (const CLI::CallForHelp &) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const UsageError & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DataError & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace trtlab

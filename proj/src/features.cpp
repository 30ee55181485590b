#include "trtlab/features.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "trtlab/errors.hpp"

namespace trtlab {

namespace fs = std::filesystem;

void ImageInterfaceConfig::validate() const {
    if (slot_tokens < 1 || strip_tokens < 0) throw InvalidConfig("bad image token counts");
    if (features != 8) throw InvalidConfig("image feature layout is fixed at 8");
    if (bump_sigma <= 0.0) throw InvalidConfig("bump sigma must be positive");
}

namespace {

double normal_cdf(double u) { return 0.5 * (1.0 + std::erf(u / std::sqrt(2.0))); }

// Mass of a unit Gaussian bump centered at c inside [lo, hi].
double bump_mass_1d(double c, double sigma, double lo, double hi) {
    return normal_cdf((hi - c) / sigma) - normal_cdf((lo - c) / sigma);
}

double window_mean(const Grid & appearance, int channels, int x0, int x1, int y0, int y1) {
    const int w = appearance.width / channels;
    x0 = std::clamp(x0, 0, w - 1);
    x1 = std::clamp(x1, 0, w - 1);
    y0 = std::clamp(y0, 0, appearance.height - 1);
    y1 = std::clamp(y1, 0, appearance.height - 1);
    double acc = 0.0;
    long count = 0;
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            for (int c = 0; c < channels; ++c) {
                acc += double(appearance.at(y, x * channels + c));
                ++count;
            }
        }
    }
    return count > 0 ? acc / double(count) : 0.0;
}

} // namespace

Grid featurize_image(const std::vector<LabeledPoint> & points, const Grid & depth,
                     const Grid & appearance, int channels, const ImageInterfaceConfig & cfg) {
    cfg.validate();
    if (channels < 1 || appearance.width % channels != 0)
        throw DimensionMismatch("appearance width does not divide by channels");
    const int w = appearance.width / channels;
    const int h = appearance.height;
    if (cfg.leak_depth && (depth.width != w || depth.height != h))
        throw DimensionMismatch("depth and appearance shapes disagree");
    if (int(points.size()) > cfg.slot_tokens)
        throw ShapeMismatch("more points than slot tokens");

    std::vector<LabeledPoint> canon = points;
    std::sort(canon.begin(), canon.end(), [](const LabeledPoint & a, const LabeledPoint & b) {
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    });

    Grid feats(cfg.tokens(), cfg.features);
    for (int s = 0; s < cfg.slot_tokens; ++s) {
        feats.at(s, 0) = 1.0f;
        if (s >= int(canon.size())) continue;
        const auto & p = canon[size_t(s)];
        feats.at(s, 1) = 1.0f;
        feats.at(s, 2) = float(double(p.x) / w);
        feats.at(s, 3) = float(double(p.y) / h);
        if (cfg.leak_depth) feats.at(s, 4) = float(double(depth.at(p.y, p.x)) / 255.0);
        feats.at(s, 5) = float(bump_mass_1d(p.x, cfg.bump_sigma, 0.0, double(w)) *
                               bump_mass_1d(p.y, cfg.bump_sigma, 0.0, double(h)));
        feats.at(s, 6) = float(window_mean(appearance, channels, p.x - 8, p.x + 7, p.y - 8, p.y + 7));
    }
    for (int s = 0; s < cfg.strip_tokens; ++s) {
        const int row = cfg.slot_tokens + s;
        const double x0 = double(s) * w / cfg.strip_tokens;
        const double x1 = double(s + 1) * w / cfg.strip_tokens;
        feats.at(row, 1) = 1.0f;
        feats.at(row, 2) = float(0.5 * (x0 + x1) / w);
        feats.at(row, 3) = 0.5f;
        double mass = 0.0;
        for (const auto & p : canon)
            mass += bump_mass_1d(p.x, cfg.bump_sigma, x0, x1) *
                    bump_mass_1d(p.y, cfg.bump_sigma, 0.0, double(h));
        feats.at(row, 5) = float(mass);
        // Pixels whose centers fall inside the strip.
        int px0 = int(std::ceil(x0 - 0.5));
        int px1 = int(std::ceil(x1 - 0.5)) - 1;
        feats.at(row, 6) = float(window_mean(appearance, channels, px0, px1, 0, h - 1));
    }
    return feats;
}

BuiltSequence build_training_sequence(const Example & ex, const Grid & image_feats,
                                      const Grid & span_z, const std::vector<int> & span_ids,
                                      const Vocabulary & vocab) {
    const bool discrete = !span_ids.empty();
    const int span_n = discrete ? int(span_ids.size()) : span_z.height;
    if (span_n < 1) throw ShapeMismatch("empty span");
    if (!discrete && span_z.width < 1) throw ShapeMismatch("empty span vectors");

    BuiltSequence seq;
    seq.span_len = span_n;
    seq.span_targets = span_z;
    seq.span_ids = span_ids;

    auto push_token = [&seq](int id) {
        seq.inputs.push_back(InputPos{PosKind::kToken, id, {}});
        seq.lm_target.push_back(-1);
        seq.depth_slot.push_back(-1);
    };

    push_token(Vocabulary::BOS);
    for (int t = 0; t < image_feats.height; ++t) {
        InputPos in;
        in.kind = PosKind::kImage;
        in.token_id = Vocabulary::PAD;
        in.vec.assign(&image_feats.data[size_t(t) * image_feats.width],
                      &image_feats.data[size_t(t) * image_feats.width] + image_feats.width);
        seq.inputs.push_back(std::move(in));
        seq.lm_target.push_back(-1);
        seq.depth_slot.push_back(-1);
    }
    for (int id : vocab.encode_text(ex.prompt_text)) push_token(id);

    seq.prompt_len = int(seq.inputs.size());
    seq.lm_target.back() = Vocabulary::DEPTH_START;

    push_token(Vocabulary::DEPTH_START);
    for (int k = 0; k < span_n; ++k) {
        // The position *before* span slot k predicts it; mark the previous
        // position, which is DEPTH_START for k = 0.
        seq.depth_slot.back() = k;
        if (discrete) {
            push_token(span_ids[size_t(k)]);
        } else {
            InputPos in;
            in.kind = PosKind::kDepthCont;
            in.token_id = Vocabulary::DEPTH_TOKEN;
            in.vec.assign(&span_z.data[size_t(k) * span_z.width],
                          &span_z.data[size_t(k) * span_z.width] + span_z.width);
            seq.inputs.push_back(std::move(in));
            seq.lm_target.push_back(-1);
            seq.depth_slot.push_back(-1);
        }
    }
    seq.lm_target.back() = Vocabulary::DEPTH_END;

    push_token(Vocabulary::DEPTH_END);
    seq.lm_target.back() = vocab.token_id("(");
    push_token(vocab.token_id("("));
    seq.lm_target.back() = vocab.letter_id(ex.answer);
    seq.answer_pos = int(seq.inputs.size()) - 1;
    push_token(vocab.letter_id(ex.answer));
    seq.lm_target.back() = vocab.token_id(")");
    push_token(vocab.token_id(")"));
    seq.lm_target.back() = Vocabulary::EOS;
    return seq;
}

PreparedExample prepare_example(const Example & ex, const std::string & dataset_dir,
                                const DatasetMeta & meta, const Vocabulary & vocab,
                                const TargetConfig & targets, const ImageInterfaceConfig & image,
                                const Codebook * codebook) {
    if (targets.discrete != (codebook != nullptr))
        throw WrongMode("codebook must be supplied exactly in discrete mode");

    PreparedExample prep;
    prep.ex = ex;
    Grid appearance =
        read_grid((fs::path(dataset_dir) / (ex.depth_target_ref + ".appearance.trtd")).string());
    Grid z = load_or_encode(dataset_dir, ex.scene_id, targets);
    if (image.leak_depth) {
        Grid depth =
            read_grid((fs::path(dataset_dir) / (ex.depth_target_ref + ".depth.trtd")).string());
        prep.image_feats = featurize_image(ex.points, depth, appearance, meta.channels, image);
    } else {
        Grid no_depth;
        prep.image_feats = featurize_image(ex.points, no_depth, appearance, meta.channels, image);
    }

    if (targets.discrete) {
        prep.span_z = resize_targets(z, targets.discrete_tokens);
        for (int id : quantize(*codebook, prep.span_z))
            prep.span_ids.push_back(vocab.depth_id(id));
    } else {
        prep.span_z = z;
    }
    prep.seq = build_training_sequence(prep.ex, prep.image_feats, prep.span_z, prep.span_ids, vocab);
    return prep;
}

} // namespace trtlab

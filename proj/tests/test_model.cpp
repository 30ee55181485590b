#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "trtlab/errors.hpp"
#include "trtlab/features.hpp"
#include "trtlab/model.hpp"
#include "trtlab/rng.hpp"
#include "trtlab/training.hpp"

using namespace trtlab;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config(int vocab, int layers = 2) {
    ModelConfig c;
    c.vocab = vocab;
    c.layers = layers;
    c.width = 16;
    c.heads = 2;
    c.ffn = 32;
    c.context = 96;
    c.image_tokens = 4;
    c.image_features = 8;
    c.target_dim = 4;
    return c;
}

Example fake_example() {
    Example ex;
    ex.example_id = "ex000000";
    ex.scene_id = "sc000000";
    ex.subset = "2pt";
    ex.prompt_style = "short";
    ex.prompt_text = "Multiple points are circled on the image. Point A is marker 1."
                     " Point B is marker 2. Which point is the closest to the camera?";
    ex.answer = 'B';
    return ex;
}

BuiltSequence tiny_sequence(const Vocabulary & vocab, int img_tokens, int k, int d, bool discrete,
                            uint64_t seed) {
    Rng rng(seed);
    Grid feats(img_tokens, 8);
    for (auto & v : feats.data) v = float(rng.uniform(0.0, 1.0));
    Grid z(k, d);
    for (auto & v : z.data) v = float(rng.gaussian());
    std::vector<int> ids;
    if (discrete)
        for (int i = 0; i < k; ++i)
            ids.push_back(vocab.depth_id(int(rng.uniform_int(0, vocab.depth_block_size - 1))));
    return build_training_sequence(fake_example(), feats, discrete ? Grid(k, d) : z, ids, vocab);
}

struct FixedVecPolicy : SpanPolicy {
    Grid z;
    explicit FixedVecPolicy(Grid g) : z(std::move(g)) {}
    int length() const override { return z.height; }
    std::vector<float> next_vec(int slot, const std::vector<float> &) override {
        return std::vector<float>(&z.data[size_t(slot) * z.width],
                                  &z.data[size_t(slot) * z.width] + z.width);
    }
    int next_id(int, int) override { throw WrongMode("vector policy used in discrete mode"); }
};

struct FixedIdPolicy : SpanPolicy {
    std::vector<int> ids;
    explicit FixedIdPolicy(std::vector<int> v) : ids(std::move(v)) {}
    int length() const override { return int(ids.size()); }
    std::vector<float> next_vec(int, const std::vector<float> &) override {
        throw WrongMode("id policy used in continuous mode");
    }
    int next_id(int slot, int) override { return ids[size_t(slot)]; }
};

struct SelfPolicy : SpanPolicy {
    int n;
    explicit SelfPolicy(int len) : n(len) {}
    int length() const override { return n; }
    std::vector<float> next_vec(int, const std::vector<float> & pred) override { return pred; }
    int next_id(int, int pred) override { return pred; }
};

std::vector<InputPos> tiny_prefix(const BuiltSequence & seq) {
    return std::vector<InputPos>(seq.inputs.begin(), seq.inputs.begin() + seq.prompt_len);
}

} // namespace

TEST_CASE("model config validation") {
    CHECK_THROWS_AS(ModelConfig{}.validate(), InvalidConfig); // vocab unset
    ModelConfig c = tiny_config(10);
    CHECK_NOTHROW(c.validate());
    c.heads = 3; // 16 % 3 != 0
    CHECK_THROWS_AS(c.validate(), InvalidConfig);
    ModelConfig d = tiny_config(10);
    d.depth_loss_layer = 5;
    CHECK_THROWS_AS(d.validate(), InvalidConfig);
    CHECK(tiny_config(10).resolved_depth_layer() == 2);
}

TEST_CASE("init is seed deterministic") {
    auto cfg = tiny_config(20);
    auto a = ModelT<float>::init(cfg, 7);
    auto b = ModelT<float>::init(cfg, 7);
    auto c = ModelT<float>::init(cfg, 8);
    ParamSlabs<float> sa(a.params), sb(b.params), sc(c.params);
    bool same = true, differs = false;
    for (size_t s = 0; s < sa.data.size(); ++s)
        for (long i = 0; i < sa.size[s]; ++i) {
            if (sa.data[s][i] != sb.data[s][i]) same = false;
            if (sa.data[s][i] != sc.data[s][i]) differs = true;
        }
    CHECK(same);
    CHECK(differs);
}

TEST_CASE("embed rejects malformed inputs") {
    auto vocab = Vocabulary::build(0);
    auto m = ModelT<float>::init(tiny_config(vocab.size()), 1);
    CHECK_THROWS_AS(m.embed({InputPos{PosKind::kToken, -1, {}}}), UnknownToken);
    CHECK_THROWS_AS(m.embed({InputPos{PosKind::kImage, 0, {1.0f, 2.0f}}}), ShapeMismatch);
    CHECK_THROWS_AS(m.embed({InputPos{PosKind::kDepthCont, 0, {1.0f}}}), ShapeMismatch);
    std::vector<InputPos> too_long(100, InputPos{PosKind::kToken, 0, {}});
    CHECK_THROWS_AS(m.embed(too_long), ContextOverflow);
}

TEST_CASE("linear probe gradients match the closed form") {
    auto vocab = Vocabulary::build(0);
    auto cfg = tiny_config(vocab.size(), 0);
    auto m = ModelT<double>::init(cfg, 3);
    auto seq = tiny_sequence(vocab, 4, 3, 4, false, 11);

    auto acts = m.forward(seq.inputs);
    const int n = seq.size();
    REQUIRE(acts.logits.cols() == n);
    // With zero layers the logits are lm_w * x0 + lm_b and zhat is the tied
    // head on x0 directly, so the gradients have one-line closed forms.
    auto ls = compute_losses(acts, seq, DepthLossKind::kMse, 0.7);
    auto g = m.backward(seq.inputs, acts, ls.dlogits, ls.dzhat);

    Mat<double> want_lm_w = ls.dlogits * acts.hiddens[0].transpose();
    CHECK((g.lm_w - want_lm_w).cwiseAbs().maxCoeff() < 1e-12);
    Vec<double> want_lm_b = ls.dlogits.rowwise().sum();
    CHECK((g.lm_b - want_lm_b).cwiseAbs().maxCoeff() < 1e-12);

    // dx0 = lm_w^T dlogits + zin_w dzhat (tied depth head reads x0 too).
    Mat<double> dx0 = m.params.lm_w.transpose() * ls.dlogits + m.params.zin_w * ls.dzhat;
    Mat<double> want_pos = Mat<double>::Zero(cfg.width, cfg.context);
    want_pos.leftCols(n) = dx0;
    CHECK((g.pos_embed - want_pos).cwiseAbs().maxCoeff() < 1e-12);

    // Token embedding gradient for the BOS column (position 0 only).
    CHECK((g.tok_embed.col(Vocabulary::BOS) - dx0.col(0)).cwiseAbs().maxCoeff() < 1e-12);

    // The tied projection accumulates from both uses.
    Mat<double> want_zin = acts.hiddens[0] * ls.dzhat.transpose();
    for (int t = 0; t < n; ++t) {
        const auto & in = seq.inputs[size_t(t)];
        if (in.kind != PosKind::kDepthCont) continue;
        Vec<double> z(cfg.target_dim);
        for (int i = 0; i < cfg.target_dim; ++i) z(i) = double(in.vec[size_t(i)]);
        want_zin += dx0.col(t) * z.transpose();
    }
    CHECK((g.zin_w - want_zin).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("finite differences confirm the full backward pass") {
    auto run = [](bool discrete, DepthLossKind kind, bool tied, int depth_layer) {
        auto vocab = Vocabulary::build(discrete ? 8 : 0);
        auto cfg = tiny_config(vocab.size());
        cfg.head_tied = tied;
        cfg.depth_loss_layer = depth_layer;
        auto m = ModelT<double>::init(cfg, 5);
        auto seq = tiny_sequence(vocab, 4, 3, 4, discrete, 13);
        return grad_check(m, seq, kind, 0.8, 1e-5, 48, 17);
    };
    CHECK(run(false, DepthLossKind::kMse, true, -1) < 1e-4);
    CHECK(run(false, DepthLossKind::kMse, false, -1) < 1e-4);
    CHECK(run(false, DepthLossKind::kCosine, true, -1) < 1e-4);
    CHECK(run(false, DepthLossKind::kMse, true, 1) < 1e-4);
    CHECK(run(false, DepthLossKind::kMse, true, 0) < 1e-4);
    CHECK(run(true, DepthLossKind::kCrossEntropy, true, -1) < 1e-4);
}

TEST_CASE("loss kinds are checked against the span mode") {
    auto vocab = Vocabulary::build(8);
    auto cfg = tiny_config(vocab.size());
    auto m = ModelT<float>::init(cfg, 2);
    auto cont = tiny_sequence(Vocabulary::build(0), 4, 3, 4, false, 1);
    auto disc = tiny_sequence(vocab, 4, 3, 4, true, 1);
    auto acts_c = m.forward(cont.inputs);
    auto acts_d = m.forward(disc.inputs);
    CHECK_THROWS_AS(compute_losses(acts_c, cont, DepthLossKind::kCrossEntropy, 1.0), WrongMode);
    CHECK_THROWS_AS(compute_losses(acts_d, disc, DepthLossKind::kMse, 1.0), WrongMode);
    CHECK_NOTHROW(compute_losses(acts_d, disc, DepthLossKind::kCrossEntropy, 1.0));
}

TEST_CASE("kv cache steps reproduce the full forward pass") {
    auto vocab = Vocabulary::build(0);
    auto cfg = tiny_config(vocab.size());
    auto m = ModelT<float>::init(cfg, 9);
    auto seq = tiny_sequence(vocab, 4, 3, 4, false, 21);

    auto acts = m.forward(seq.inputs);
    KVCache<float> cache;
    for (int t = 0; t < seq.size(); ++t) {
        auto out = m.step(seq.inputs[size_t(t)], cache);
        float worst = (out.logits - acts.logits.col(t)).cwiseAbs().maxCoeff();
        CHECK(worst <= 1e-6f);
        float worst_h =
            (out.depth_hidden - acts.hiddens[size_t(cfg.resolved_depth_layer())].col(t))
                .cwiseAbs()
                .maxCoeff();
        CHECK(worst_h <= 1e-6f);
    }
    CHECK(cache.len == seq.size());
}

TEST_CASE("generate: span structure, consumption capture, and budget checks") {
    auto vocab = Vocabulary::build(0);
    auto cfg = tiny_config(vocab.size());
    auto m = ModelT<float>::init(cfg, 9);
    auto seq = tiny_sequence(vocab, 4, 3, 4, false, 31);
    auto prefix = tiny_prefix(seq);

    Grid fed(3, 4);
    Rng r(5);
    for (auto & v : fed.data) v = float(r.gaussian());
    FixedVecPolicy policy(fed);
    GenerateOptions opts;
    opts.response_budget = 16;
    auto res = m.generate(prefix, vocab, policy, opts);

    REQUIRE(int(res.tokens.size()) >= 5);
    CHECK(res.tokens[0] == Vocabulary::DEPTH_START);
    for (int k = 0; k < 3; ++k) CHECK(res.tokens[size_t(1 + k)] == Vocabulary::DEPTH_TOKEN);
    CHECK(res.tokens[4] == Vocabulary::DEPTH_END);
    CHECK(res.consumed_span == fed);
    CHECK(res.predicted_span.height == 3);

    GenerateOptions tight;
    tight.response_budget = 8; // needs 3 + 6
    CHECK_THROWS_AS(m.generate(prefix, vocab, policy, tight), DecodeBudgetExceeded);

    std::vector<InputPos> huge(size_t(cfg.context) - 4, InputPos{PosKind::kToken, 0, {}});
    CHECK_THROWS_AS(m.generate(huge, vocab, policy, opts), ContextOverflow);
}

TEST_CASE("generate: cached and uncached decoding agree") {
    auto vocab = Vocabulary::build(0);
    auto cfg = tiny_config(vocab.size());
    auto m = ModelT<float>::init(cfg, 12);
    auto seq = tiny_sequence(vocab, 4, 3, 4, false, 33);
    auto prefix = tiny_prefix(seq);

    SelfPolicy on_policy(3), off_policy(3);
    GenerateOptions on;
    on.response_budget = 14;
    GenerateOptions off = on;
    off.use_kv_cache = false;
    auto a = m.generate(prefix, vocab, on_policy, on);
    auto b = m.generate(prefix, vocab, off_policy, off);
    CHECK(a.tokens == b.tokens);
    REQUIRE(a.predicted_span.size() == b.predicted_span.size());
    for (size_t i = 0; i < a.predicted_span.data.size(); ++i)
        CHECK(std::fabs(a.predicted_span.data[i] - b.predicted_span.data[i]) <= 1e-5f);
}

TEST_CASE("generate: discrete spans stay inside the depth block") {
    auto vocab = Vocabulary::build(8);
    auto cfg = tiny_config(vocab.size());
    auto m = ModelT<float>::init(cfg, 4);
    auto seq = tiny_sequence(vocab, 4, 3, 4, true, 41);
    auto prefix = tiny_prefix(seq);

    GenerateOptions opts;
    opts.discrete = true;
    opts.response_budget = 16;

    SelfPolicy self(3);
    auto res = m.generate(prefix, vocab, self, opts);
    REQUIRE(res.consumed_ids.size() == 3);
    for (int id : res.consumed_ids) CHECK(vocab.is_depth_id(id));
    for (int id : res.predicted_ids) CHECK(vocab.is_depth_id(id));
    for (int k = 0; k < 3; ++k) CHECK(res.tokens[size_t(1 + k)] == res.consumed_ids[size_t(k)]);

    FixedIdPolicy bad({vocab.depth_id(0), Vocabulary::EOS, vocab.depth_id(1)});
    CHECK_THROWS_AS(m.generate(prefix, vocab, bad, opts), WrongMode);
}

TEST_CASE("generate: span length follows the policy, not the training span") {
    auto vocab = Vocabulary::build(0);
    auto cfg = tiny_config(vocab.size());
    auto m = ModelT<float>::init(cfg, 9);
    auto seq = tiny_sequence(vocab, 4, 3, 4, false, 51);
    auto prefix = tiny_prefix(seq);

    Grid fed(7, 4, 0.25f);
    FixedVecPolicy policy(fed);
    GenerateOptions opts;
    opts.response_budget = 20;
    auto res = m.generate(prefix, vocab, policy, opts);
    CHECK(res.tokens[0] == Vocabulary::DEPTH_START);
    for (int k = 0; k < 7; ++k) CHECK(res.tokens[size_t(1 + k)] == Vocabulary::DEPTH_TOKEN);
    CHECK(res.tokens[8] == Vocabulary::DEPTH_END);
    CHECK(res.consumed_span.height == 7);
}

TEST_CASE("checkpoints round trip bit-exactly") {
    auto vocab = Vocabulary::build(8);
    auto cfg = tiny_config(vocab.size());
    cfg.head_tied = false;
    auto m = ModelT<float>::init(cfg, 77);
    auto dir = fs::temp_directory_path() / "trtlab_test_ckpt";
    fs::create_directories(dir);
    auto path = (dir / "model.trtm").string();
    save_checkpoint(path, m);
    Model back = load_checkpoint(path);
    CHECK(back.cfg.vocab == cfg.vocab);
    CHECK(back.cfg.head_tied == false);
    CHECK(back.cfg.layers == cfg.layers);

    ParamSlabs<float> sa(m.params), sb(back.params);
    REQUIRE(sa.total == sb.total);
    bool same = true;
    for (size_t s = 0; s < sa.data.size(); ++s)
        for (long i = 0; i < sa.size[s]; ++i)
            if (sa.data[s][i] != sb.data[s][i]) same = false;
    CHECK(same);

    {
        std::ofstream out(path, std::ios::binary);
        out << "XXXX";
    }
    CHECK_THROWS_AS(load_checkpoint(path), SchemaMismatch);
    CHECK_THROWS_AS(load_checkpoint((dir / "missing.trtm").string()), DataError);
}

TEST_CASE("build_training_sequence lays out supervision exactly") {
    auto vocab = Vocabulary::build(0);
    Rng rng(3);
    Grid feats(4, 8);
    for (auto & v : feats.data) v = float(rng.uniform(0.0, 1.0));
    Grid z(3, 4);
    for (auto & v : z.data) v = float(rng.gaussian());
    Example ex = fake_example();
    auto seq = build_training_sequence(ex, feats, z, {}, vocab);

    const int prompt_tokens = int(vocab.encode_text(ex.prompt_text).size());
    CHECK(seq.prompt_len == 1 + 4 + prompt_tokens);
    CHECK(seq.size() == seq.prompt_len + 1 + 3 + 1 + 2 + 1);
    CHECK(seq.span_len == 3);

    // Input kinds and ids.
    CHECK(seq.inputs[0].token_id == Vocabulary::BOS);
    for (int t = 1; t <= 4; ++t) CHECK(seq.inputs[size_t(t)].kind == PosKind::kImage);
    CHECK(seq.inputs[size_t(seq.prompt_len)].token_id == Vocabulary::DEPTH_START);
    for (int k = 0; k < 3; ++k) {
        const auto & in = seq.inputs[size_t(seq.prompt_len + 1 + k)];
        CHECK(in.kind == PosKind::kDepthCont);
        for (int j = 0; j < 4; ++j) CHECK(in.vec[size_t(j)] == z.at(k, j));
    }
    CHECK(seq.inputs[size_t(seq.prompt_len + 4)].token_id == Vocabulary::DEPTH_END);
    CHECK(seq.inputs.back().token_id == vocab.token_id(")"));

    // Supervision: exactly six LM targets, on the right positions.
    int n_lm = 0;
    for (int t = 0; t < seq.size(); ++t)
        if (seq.lm_target[size_t(t)] >= 0) ++n_lm;
    CHECK(n_lm == 6);
    CHECK(seq.lm_target[size_t(seq.prompt_len - 1)] == Vocabulary::DEPTH_START);
    CHECK(seq.lm_target[size_t(seq.prompt_len + 3)] == Vocabulary::DEPTH_END);
    CHECK(seq.lm_target[size_t(seq.prompt_len + 4)] == vocab.token_id("("));
    CHECK(seq.lm_target[size_t(seq.prompt_len + 5)] == vocab.letter_id('B'));
    CHECK(seq.answer_pos == seq.prompt_len + 5);
    CHECK(seq.lm_target[size_t(seq.prompt_len + 6)] == vocab.token_id(")"));
    CHECK(seq.lm_target.back() == Vocabulary::EOS);

    // Depth slots: DEPTH_START predicts slot 0, span k predicts k+1.
    CHECK(seq.depth_slot[size_t(seq.prompt_len)] == 0);
    CHECK(seq.depth_slot[size_t(seq.prompt_len + 1)] == 1);
    CHECK(seq.depth_slot[size_t(seq.prompt_len + 2)] == 2);
    CHECK(seq.depth_slot[size_t(seq.prompt_len + 3)] == -1); // that one is the LM's DEPTH_END

    // Discrete layout swaps span inputs for ids.
    auto dvocab = Vocabulary::build(8);
    std::vector<int> ids = {dvocab.depth_id(1), dvocab.depth_id(7), dvocab.depth_id(3)};
    auto dseq = build_training_sequence(ex, feats, Grid(3, 4), ids, dvocab);
    for (int k = 0; k < 3; ++k) {
        const auto & in = dseq.inputs[size_t(dseq.prompt_len + 1 + k)];
        CHECK(in.kind == PosKind::kToken);
        CHECK(in.token_id == ids[size_t(k)]);
    }
    CHECK(dseq.span_ids == ids);
}

TEST_CASE("featurize_image: label order never reaches the features") {
    ImageInterfaceConfig cfg;
    Rng rng(9);
    Grid appearance(64, 64 * 2);
    for (auto & v : appearance.data) v = float(rng.uniform(0.0, 1.0));
    Grid depth(64, 64);
    for (auto & v : depth.data) v = float(rng.uniform(10.0, 250.0));

    std::vector<LabeledPoint> pts(3);
    pts[0] = {'A', 10, 50, 100.0f};
    pts[1] = {'B', 30, 12, 150.0f};
    pts[2] = {'C', 55, 33, 200.0f};
    Grid feats = featurize_image(pts, depth, appearance, 2, cfg);

    std::vector<LabeledPoint> relabeled = pts;
    relabeled[0].label = 'C';
    relabeled[1].label = 'A';
    relabeled[2].label = 'B';
    std::swap(relabeled[0], relabeled[2]);
    Grid feats2 = featurize_image(relabeled, depth, appearance, 2, cfg);
    CHECK(feats == feats2);

    // Slots follow (y, x): B (y=12), C (y=33), A (y=50).
    CHECK(feats.at(0, 2) == doctest::Approx(30.0 / 64.0));
    CHECK(feats.at(1, 2) == doctest::Approx(55.0 / 64.0));
    CHECK(feats.at(2, 2) == doctest::Approx(10.0 / 64.0));
}

TEST_CASE("featurize_image: presence, leak gating, and strip pooling") {
    ImageInterfaceConfig cfg;
    Grid appearance(64, 64, 0.25f);
    Grid depth(64, 64, 127.5f);
    std::vector<LabeledPoint> pts(2);
    pts[0] = {'A', 16, 20, 127.5f};
    pts[1] = {'B', 48, 40, 127.5f};

    Grid feats = featurize_image(pts, depth, appearance, 1, cfg);
    REQUIRE(feats.height == 16);
    REQUIRE(feats.width == 8);
    CHECK(feats.at(0, 0) == 1.0f);
    CHECK(feats.at(0, 1) == 1.0f);
    CHECK(feats.at(1, 1) == 1.0f);
    CHECK(feats.at(2, 1) == 0.0f); // empty slot
    CHECK(feats.at(2, 2) == 0.0f);
    CHECK(feats.at(0, 4) == 0.0f); // leak off

    ImageInterfaceConfig leak = cfg;
    leak.leak_depth = true;
    Grid lfeats = featurize_image(pts, depth, appearance, 1, leak);
    CHECK(lfeats.at(0, 4) == doctest::Approx(0.5));

    // Strips: uniform appearance pools to the constant; bump mass over all
    // strips sums to the in-bounds mass of both markers.
    double mass = 0.0;
    for (int s = 0; s < cfg.strip_tokens; ++s) {
        int row = cfg.slot_tokens + s;
        CHECK(feats.at(row, 0) == 0.0f);
        CHECK(feats.at(row, 1) == 1.0f);
        CHECK(feats.at(row, 6) == doctest::Approx(0.25));
        mass += double(feats.at(row, 5));
    }
    double want = double(feats.at(0, 5)) + double(feats.at(1, 5));
    CHECK(mass == doctest::Approx(want).epsilon(1e-6));

    std::vector<LabeledPoint> too_many(6);
    CHECK_THROWS_AS(featurize_image(too_many, depth, appearance, 1, cfg), ShapeMismatch);
}

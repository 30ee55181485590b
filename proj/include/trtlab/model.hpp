#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trtlab/errors.hpp"
#include "trtlab/grid.hpp"
#include "trtlab/rng.hpp"
#include "trtlab/vocab.hpp"

namespace trtlab {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

struct ModelConfig {
    int vocab = 0;
    int layers = 4;
    int width = 128;
    int heads = 4;
    int ffn = 512;
    int context = 512;
    int image_tokens = 16;
    int image_features = 8;
    int target_dim = 8;
    bool head_tied = true;
    // Index into the hidden stack the depth head reads from: 0 is the
    // embedding output, `layers` is the last block output before the final
    // layer norm, -1 is shorthand for `layers`.
    int depth_loss_layer = -1;

    int head_dim() const { return width / heads; }
    int resolved_depth_layer() const { return depth_loss_layer < 0 ? layers : depth_loss_layer; }
    void validate() const {
        if (vocab < 1) throw InvalidConfig("vocab must be positive");
        if (layers < 0) throw InvalidConfig("layers must be nonnegative");
        if (width < 1 || ffn < 1 || context < 1) throw InvalidConfig("bad model dims");
        if (heads < 1 || width % heads != 0) throw InvalidConfig("width must divide by heads");
        if (image_tokens < 0 || image_features < 1 || target_dim < 1)
            throw InvalidConfig("bad interface dims");
        if (depth_loss_layer < -1 || depth_loss_layer > layers)
            throw InvalidConfig("depth_loss_layer out of range");
    }
};

// One input position. kToken embeds a vocabulary id; kImage embeds a feature
// vector through the image projection (no token embedding); kDepthCont embeds
// the DEPTH_TOKEN id plus the projected continuous span vector.
enum class PosKind { kToken, kImage, kDepthCont };

struct InputPos {
    PosKind kind = PosKind::kToken;
    int token_id = 0;
    std::vector<float> vec; // image features (F) or span vector (D)
};

// A teacher-forced training sequence plus its supervision layout. lm_target[t]
// is the id position t must predict (-1 when unsupervised); depth_slot[t] is
// the span slot whose vector position t must predict (-1 off the span).
struct BuiltSequence {
    std::vector<InputPos> inputs;
    std::vector<int> lm_target;
    std::vector<int> depth_slot;
    Grid span_targets;          // (K, D) continuous targets
    std::vector<int> span_ids;  // K discrete target ids (empty in continuous mode)
    int span_len = 0;
    int prompt_len = 0; // positions before DEPTH_START (the frozen prefix)
    int answer_pos = -1; // position whose lm_target is the answer letter
    int size() const { return int(inputs.size()); }
};

template <typename T>
struct LayerParams {
    Vec<T> ln1_g, ln1_b, ln2_g, ln2_b;
    Mat<T> wq, wk, wv, wo;
    Vec<T> bq, bk, bv, bo;
    Mat<T> w1, w2;
    Vec<T> b1, b2;

    template <typename F>
    void for_each(const std::string & prefix, F && f) {
        f(prefix + ".ln1.g", ln1_g);
        f(prefix + ".ln1.b", ln1_b);
        f(prefix + ".attn.wq", wq);
        f(prefix + ".attn.bq", bq);
        f(prefix + ".attn.wk", wk);
        f(prefix + ".attn.bk", bk);
        f(prefix + ".attn.wv", wv);
        f(prefix + ".attn.bv", bv);
        f(prefix + ".attn.wo", wo);
        f(prefix + ".attn.bo", bo);
        f(prefix + ".ln2.g", ln2_g);
        f(prefix + ".ln2.b", ln2_b);
        f(prefix + ".ffn.w1", w1);
        f(prefix + ".ffn.b1", b1);
        f(prefix + ".ffn.w2", w2);
        f(prefix + ".ffn.b2", b2);
    }
};

template <typename T>
struct ParamSet {
    Mat<T> tok_embed; // width x vocab
    Mat<T> pos_embed; // width x context
    Mat<T> img_w;     // width x image_features
    Vec<T> img_b;
    Mat<T> zin_w; // width x target_dim, also the tied depth head
    Vec<T> zin_b;
    Mat<T> zhead_w; // target_dim x width, only when untied
    Vec<T> zhead_b;
    std::vector<LayerParams<T>> blocks;
    Vec<T> fln_g, fln_b;
    Mat<T> lm_w; // vocab x width
    Vec<T> lm_b;
    bool tied = true;

    template <typename F>
    void for_each(F && f) {
        f("embed.tok", tok_embed);
        f("embed.pos", pos_embed);
        f("img.w", img_w);
        f("img.b", img_b);
        f("zin.w", zin_w);
        f("zin.b", zin_b);
        if (!tied) f("zhead.w", zhead_w);
        f("zhead.b", zhead_b);
        for (size_t i = 0; i < blocks.size(); ++i)
            blocks[i].for_each("block" + std::to_string(i), f);
        f("final_ln.g", fln_g);
        f("final_ln.b", fln_b);
        f("lm.w", lm_w);
        f("lm.b", lm_b);
    }
};

template <typename T>
struct LayerCache {
    Mat<T> ln1_xhat, ln1_out; // H x N
    Vec<T> ln1_inv;           // N
    Mat<T> q, k, v;           // H x N
    std::vector<Mat<T>> att;  // per head, N x N row=query
    Mat<T> att_concat;        // H x N (pre output projection)
    Mat<T> a;                 // residual after attention
    Mat<T> ln2_xhat, ln2_out;
    Vec<T> ln2_inv;
    Mat<T> ffn_pre, ffn_act; // FFN x N
};

template <typename T>
struct Activations {
    std::vector<Mat<T>> hiddens; // layers+1 entries, H x N
    std::vector<LayerCache<T>> layers;
    Mat<T> fln_xhat, fln_out;
    Vec<T> fln_inv;
    Mat<T> logits; // V x N
    Mat<T> zhat;   // D x N, depth head applied at every position
};

// Per-layer key/value store for incremental decoding.
template <typename T>
struct KVCache {
    std::vector<Mat<T>> k, v; // H x len
    int len = 0;
};

struct GenerateOptions {
    bool use_kv_cache = true;
    bool discrete = false;
    // Cap on emitted response tokens including the span and markers.
    int response_budget = 32;
};

// Supplies what the model actually consumes at each span slot. The model
// hands over its own prediction for the slot; dataset/identity/replacement
// policies ignore it, the self-feedback policy returns it.
struct SpanPolicy {
    virtual ~SpanPolicy() = default;
    virtual int length() const = 0;
    virtual std::vector<float> next_vec(int slot, const std::vector<float> & model_pred) = 0;
    virtual int next_id(int slot, int model_pred_id) = 0;
};

struct GenerateResult {
    std::vector<int> tokens; // emitted response ids, DEPTH_START .. EOS
    Grid consumed_span;      // (n, D) vectors fed at span slots (continuous)
    std::vector<int> consumed_ids;
    Grid predicted_span; // (n, D) model predictions at span slots
    std::vector<int> predicted_ids;
    bool hit_eos = false;
};

namespace detail {

template <typename T>
T gelu(T x) {
    const T c = T(0.7978845608028654); // sqrt(2/pi)
    T u = c * (x + T(0.044715) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad(T x) {
    const T c = T(0.7978845608028654);
    T u = c * (x + T(0.044715) * x * x * x);
    T t = std::tanh(u);
    T du = c * (T(1) + T(3) * T(0.044715) * x * x);
    return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

inline constexpr double kLnEps = 1e-5;

// Column-wise layer norm; writes xhat (pre-gain) and 1/std per column.
template <typename T>
void layer_norm(const Mat<T> & x, const Vec<T> & g, const Vec<T> & b, Mat<T> & xhat, Mat<T> & out,
                Vec<T> & inv) {
    const int h = int(x.rows()), n = int(x.cols());
    xhat.resize(h, n);
    out.resize(h, n);
    inv.resize(n);
    for (int j = 0; j < n; ++j) {
        T mu = x.col(j).mean();
        T var = (x.col(j).array() - mu).square().mean();
        T is = T(1) / std::sqrt(var + T(kLnEps));
        inv(j) = is;
        xhat.col(j) = (x.col(j).array() - mu) * is;
        out.col(j) = xhat.col(j).cwiseProduct(g) + b;
    }
}

// Backward of the column-wise layer norm. Returns dx; accumulates dg, db.
template <typename T>
Mat<T> layer_norm_backward(const Mat<T> & dout, const Mat<T> & xhat, const Vec<T> & inv,
                           const Vec<T> & g, Vec<T> & dg, Vec<T> & db) {
    const int h = int(dout.rows()), n = int(dout.cols());
    Mat<T> dx(h, n);
    for (int j = 0; j < n; ++j) {
        Vec<T> dxhat = dout.col(j).cwiseProduct(g);
        dg += dout.col(j).cwiseProduct(xhat.col(j));
        db += dout.col(j);
        T m1 = dxhat.mean();
        T m2 = dxhat.cwiseProduct(xhat.col(j)).mean();
        dx.col(j) = (dxhat.array() - m1 - xhat.col(j).array() * m2) * inv(j);
    }
    return dx;
}

} // namespace detail

template <typename T>
struct ModelT {
    ModelConfig cfg;
    ParamSet<T> params;

    static ModelT init(const ModelConfig & cfg, uint64_t seed) {
        cfg.validate();
        ModelT m;
        m.cfg = cfg;
        auto & p = m.params;
        p.tied = cfg.head_tied;
        Rng rng = Rng::derive(seed, {0x696e6974});
        auto gauss = [&rng](Mat<T> & w, int r, int c, double sigma) {
            w.resize(r, c);
            for (int j = 0; j < c; ++j)
                for (int i = 0; i < r; ++i) w(i, j) = T(rng.gaussian(0.0, sigma));
        };
        const double s = 0.02;
        gauss(p.tok_embed, cfg.width, cfg.vocab, s);
        gauss(p.pos_embed, cfg.width, cfg.context, s);
        gauss(p.img_w, cfg.width, cfg.image_features, s);
        p.img_b = Vec<T>::Zero(cfg.width);
        gauss(p.zin_w, cfg.width, cfg.target_dim, s);
        p.zin_b = Vec<T>::Zero(cfg.width);
        if (!cfg.head_tied) gauss(p.zhead_w, cfg.target_dim, cfg.width, s);
        p.zhead_b = Vec<T>::Zero(cfg.target_dim);
        p.blocks.resize(size_t(cfg.layers));
        for (auto & blk : p.blocks) {
            blk.ln1_g = Vec<T>::Ones(cfg.width);
            blk.ln1_b = Vec<T>::Zero(cfg.width);
            blk.ln2_g = Vec<T>::Ones(cfg.width);
            blk.ln2_b = Vec<T>::Zero(cfg.width);
            gauss(blk.wq, cfg.width, cfg.width, s);
            gauss(blk.wk, cfg.width, cfg.width, s);
            gauss(blk.wv, cfg.width, cfg.width, s);
            gauss(blk.wo, cfg.width, cfg.width, s);
            blk.bq = Vec<T>::Zero(cfg.width);
            blk.bk = Vec<T>::Zero(cfg.width);
            blk.bv = Vec<T>::Zero(cfg.width);
            blk.bo = Vec<T>::Zero(cfg.width);
            gauss(blk.w1, cfg.ffn, cfg.width, s);
            blk.b1 = Vec<T>::Zero(cfg.ffn);
            gauss(blk.w2, cfg.width, cfg.ffn, s);
            blk.b2 = Vec<T>::Zero(cfg.width);
        }
        p.fln_g = Vec<T>::Ones(cfg.width);
        p.fln_b = Vec<T>::Zero(cfg.width);
        gauss(p.lm_w, cfg.vocab, cfg.width, s);
        p.lm_b = Vec<T>::Zero(cfg.vocab);
        return m;
    }

    ParamSet<T> zero_grads() const {
        ParamSet<T> g;
        g.tied = params.tied;
        g.tok_embed = Mat<T>::Zero(params.tok_embed.rows(), params.tok_embed.cols());
        g.pos_embed = Mat<T>::Zero(params.pos_embed.rows(), params.pos_embed.cols());
        g.img_w = Mat<T>::Zero(params.img_w.rows(), params.img_w.cols());
        g.img_b = Vec<T>::Zero(params.img_b.size());
        g.zin_w = Mat<T>::Zero(params.zin_w.rows(), params.zin_w.cols());
        g.zin_b = Vec<T>::Zero(params.zin_b.size());
        if (!params.tied) g.zhead_w = Mat<T>::Zero(params.zhead_w.rows(), params.zhead_w.cols());
        g.zhead_b = Vec<T>::Zero(params.zhead_b.size());
        g.blocks.resize(params.blocks.size());
        for (size_t i = 0; i < params.blocks.size(); ++i) {
            const auto & b = params.blocks[i];
            auto & o = g.blocks[i];
            o.ln1_g = Vec<T>::Zero(b.ln1_g.size());
            o.ln1_b = Vec<T>::Zero(b.ln1_b.size());
            o.ln2_g = Vec<T>::Zero(b.ln2_g.size());
            o.ln2_b = Vec<T>::Zero(b.ln2_b.size());
            o.wq = Mat<T>::Zero(b.wq.rows(), b.wq.cols());
            o.wk = Mat<T>::Zero(b.wk.rows(), b.wk.cols());
            o.wv = Mat<T>::Zero(b.wv.rows(), b.wv.cols());
            o.wo = Mat<T>::Zero(b.wo.rows(), b.wo.cols());
            o.bq = Vec<T>::Zero(b.bq.size());
            o.bk = Vec<T>::Zero(b.bk.size());
            o.bv = Vec<T>::Zero(b.bv.size());
            o.bo = Vec<T>::Zero(b.bo.size());
            o.w1 = Mat<T>::Zero(b.w1.rows(), b.w1.cols());
            o.b1 = Vec<T>::Zero(b.b1.size());
            o.w2 = Mat<T>::Zero(b.w2.rows(), b.w2.cols());
            o.b2 = Vec<T>::Zero(b.b2.size());
        }
        g.fln_g = Vec<T>::Zero(params.fln_g.size());
        g.fln_b = Vec<T>::Zero(params.fln_b.size());
        g.lm_w = Mat<T>::Zero(params.lm_w.rows(), params.lm_w.cols());
        g.lm_b = Vec<T>::Zero(params.lm_b.size());
        return g;
    }

    // Embeds the input positions into an H x N matrix.
    Mat<T> embed(const std::vector<InputPos> & inputs, int pos_offset = 0) const {
        const int n = int(inputs.size());
        if (pos_offset + n > cfg.context)
            throw ContextOverflow("sequence of " + std::to_string(pos_offset + n) +
                                  " exceeds context " + std::to_string(cfg.context));
        Mat<T> x(cfg.width, n);
        for (int t = 0; t < n; ++t) {
            const auto & in = inputs[size_t(t)];
            switch (in.kind) {
            case PosKind::kToken:
                if (in.token_id < 0 || in.token_id >= cfg.vocab)
                    throw UnknownToken("token id out of range: " + std::to_string(in.token_id));
                x.col(t) = params.tok_embed.col(in.token_id);
                break;
            case PosKind::kImage: {
                if (int(in.vec.size()) != cfg.image_features)
                    throw ShapeMismatch("image feature width mismatch");
                Vec<T> f(cfg.image_features);
                for (int i = 0; i < cfg.image_features; ++i) f(i) = T(in.vec[size_t(i)]);
                x.col(t) = params.img_w * f + params.img_b;
                break;
            }
            case PosKind::kDepthCont: {
                if (int(in.vec.size()) != cfg.target_dim)
                    throw ShapeMismatch("span vector width mismatch");
                Vec<T> z(cfg.target_dim);
                for (int i = 0; i < cfg.target_dim; ++i) z(i) = T(in.vec[size_t(i)]);
                x.col(t) = params.tok_embed.col(Vocabulary::DEPTH_TOKEN) + params.zin_w * z +
                           params.zin_b;
                break;
            }
            }
            x.col(t) += params.pos_embed.col(pos_offset + t);
        }
        return x;
    }

    Mat<T> depth_head(const Mat<T> & h) const {
        Mat<T> zh;
        if (params.tied) zh = params.zin_w.transpose() * h;
        else zh = params.zhead_w * h;
        zh.colwise() += params.zhead_b;
        return zh;
    }

    // Full teacher-forced forward pass; records everything backward needs.
    Activations<T> forward(const std::vector<InputPos> & inputs) const {
        Activations<T> acts;
        const int n = int(inputs.size());
        const int hd = cfg.head_dim();
        const T scale = T(1) / std::sqrt(T(hd));
        acts.hiddens.reserve(size_t(cfg.layers) + 1);
        acts.hiddens.push_back(embed(inputs));
        acts.layers.resize(size_t(cfg.layers));
        for (int l = 0; l < cfg.layers; ++l) {
            const auto & blk = params.blocks[size_t(l)];
            auto & lc = acts.layers[size_t(l)];
            const Mat<T> & x = acts.hiddens.back();
            detail::layer_norm(x, blk.ln1_g, blk.ln1_b, lc.ln1_xhat, lc.ln1_out, lc.ln1_inv);
            lc.q = blk.wq * lc.ln1_out;
            lc.q.colwise() += blk.bq;
            lc.k = blk.wk * lc.ln1_out;
            lc.k.colwise() += blk.bk;
            lc.v = blk.wv * lc.ln1_out;
            lc.v.colwise() += blk.bv;
            lc.att.resize(size_t(cfg.heads));
            lc.att_concat.resize(cfg.width, n);
            for (int h = 0; h < cfg.heads; ++h) {
                auto qh = lc.q.middleRows(h * hd, hd);
                auto kh = lc.k.middleRows(h * hd, hd);
                auto vh = lc.v.middleRows(h * hd, hd);
                Mat<T> & att = lc.att[size_t(h)];
                att = Mat<T>::Zero(n, n);
                for (int qi = 0; qi < n; ++qi) {
                    T mx = std::numeric_limits<T>::lowest();
                    for (int ki = 0; ki <= qi; ++ki) {
                        T s = qh.col(qi).dot(kh.col(ki)) * scale;
                        att(qi, ki) = s;
                        mx = std::max(mx, s);
                    }
                    T denom = T(0);
                    for (int ki = 0; ki <= qi; ++ki) {
                        att(qi, ki) = std::exp(att(qi, ki) - mx);
                        denom += att(qi, ki);
                    }
                    for (int ki = 0; ki <= qi; ++ki) att(qi, ki) /= denom;
                }
                lc.att_concat.middleRows(h * hd, hd) = vh * att.transpose();
            }
            lc.a = x + blk.wo * lc.att_concat;
            lc.a.colwise() += blk.bo;
            detail::layer_norm(lc.a, blk.ln2_g, blk.ln2_b, lc.ln2_xhat, lc.ln2_out, lc.ln2_inv);
            lc.ffn_pre = blk.w1 * lc.ln2_out;
            lc.ffn_pre.colwise() += blk.b1;
            lc.ffn_act = lc.ffn_pre.unaryExpr([](T x) { return detail::gelu(x); });
            Mat<T> y = lc.a + blk.w2 * lc.ffn_act;
            y.colwise() += blk.b2;
            acts.hiddens.push_back(std::move(y));
        }
        if (cfg.layers > 0) {
            detail::layer_norm(acts.hiddens.back(), params.fln_g, params.fln_b, acts.fln_xhat,
                               acts.fln_out, acts.fln_inv);
            acts.logits = params.lm_w * acts.fln_out;
        } else {
            acts.logits = params.lm_w * acts.hiddens.back();
        }
        acts.logits.colwise() += params.lm_b;
        acts.zhat = depth_head(acts.hiddens[size_t(cfg.resolved_depth_layer())]);
        return acts;
    }

    // Backward from dlogits and dzhat; returns parameter gradients.
    ParamSet<T> backward(const std::vector<InputPos> & inputs, const Activations<T> & acts,
                         const Mat<T> & dlogits, const Mat<T> & dzhat) const {
        const int n = int(inputs.size());
        const int hd = cfg.head_dim();
        const T scale = T(1) / std::sqrt(T(hd));
        ParamSet<T> g = zero_grads();

        g.lm_w = dlogits * (cfg.layers > 0 ? acts.fln_out : acts.hiddens.back()).transpose();
        g.lm_b = dlogits.rowwise().sum();
        Mat<T> dh;
        if (cfg.layers > 0) {
            Mat<T> dfln = params.lm_w.transpose() * dlogits;
            dh = detail::layer_norm_backward(dfln, acts.fln_xhat, acts.fln_inv, params.fln_g,
                                             g.fln_g, g.fln_b);
        } else {
            dh = params.lm_w.transpose() * dlogits;
        }

        const int dl = cfg.resolved_depth_layer();
        auto add_depth_head = [&](Mat<T> & dhid) {
            const Mat<T> & h = acts.hiddens[size_t(dl)];
            if (params.tied) {
                g.zin_w += h * dzhat.transpose();
                dhid += params.zin_w * dzhat;
            } else {
                g.zhead_w += dzhat * h.transpose();
                dhid += params.zhead_w.transpose() * dzhat;
            }
            g.zhead_b += dzhat.rowwise().sum();
        };
        if (dl == cfg.layers) add_depth_head(dh);

        for (int l = cfg.layers - 1; l >= 0; --l) {
            const auto & blk = params.blocks[size_t(l)];
            const auto & lc = acts.layers[size_t(l)];
            auto & gb = g.blocks[size_t(l)];

            // FFN side: y = a + w2 * gelu(w1 * ln2(a) + b1) + b2
            Mat<T> dffn_act = blk.w2.transpose() * dh;
            gb.w2 += dh * lc.ffn_act.transpose();
            gb.b2 += dh.rowwise().sum();
            Mat<T> dffn_pre =
                dffn_act.cwiseProduct(lc.ffn_pre.unaryExpr([](T x) { return detail::gelu_grad(x); }));
            gb.w1 += dffn_pre * lc.ln2_out.transpose();
            gb.b1 += dffn_pre.rowwise().sum();
            Mat<T> dln2_out = blk.w1.transpose() * dffn_pre;
            Mat<T> da = detail::layer_norm_backward(dln2_out, lc.ln2_xhat, lc.ln2_inv, blk.ln2_g,
                                                    gb.ln2_g, gb.ln2_b);
            da += dh; // residual

            // Attention side: a = x + wo * concat_h(v_h att_h^T) + bo
            Mat<T> dconcat = blk.wo.transpose() * da;
            gb.wo += da * lc.att_concat.transpose();
            gb.bo += da.rowwise().sum();
            Mat<T> dq = Mat<T>::Zero(cfg.width, n);
            Mat<T> dk = Mat<T>::Zero(cfg.width, n);
            Mat<T> dv = Mat<T>::Zero(cfg.width, n);
            for (int h = 0; h < cfg.heads; ++h) {
                auto dout = dconcat.middleRows(h * hd, hd);
                auto vh = lc.v.middleRows(h * hd, hd);
                auto qh = lc.q.middleRows(h * hd, hd);
                auto kh = lc.k.middleRows(h * hd, hd);
                const Mat<T> & att = lc.att[size_t(h)];
                dv.middleRows(h * hd, hd) = dout * att;
                Mat<T> datt = dout.transpose() * vh; // N x N, row = query
                Mat<T> ds = Mat<T>::Zero(n, n);
                for (int qi = 0; qi < n; ++qi) {
                    T dot = T(0);
                    for (int ki = 0; ki <= qi; ++ki) dot += datt(qi, ki) * att(qi, ki);
                    for (int ki = 0; ki <= qi; ++ki)
                        ds(qi, ki) = att(qi, ki) * (datt(qi, ki) - dot);
                }
                dq.middleRows(h * hd, hd) = kh * ds.transpose() * scale;
                dk.middleRows(h * hd, hd) = qh * ds * scale;
            }
            gb.wq += dq * lc.ln1_out.transpose();
            gb.bq += dq.rowwise().sum();
            gb.wk += dk * lc.ln1_out.transpose();
            gb.bk += dk.rowwise().sum();
            gb.wv += dv * lc.ln1_out.transpose();
            gb.bv += dv.rowwise().sum();
            Mat<T> dln1_out =
                blk.wq.transpose() * dq + blk.wk.transpose() * dk + blk.wv.transpose() * dv;
            Mat<T> dx = detail::layer_norm_backward(dln1_out, lc.ln1_xhat, lc.ln1_inv, blk.ln1_g,
                                                    gb.ln1_g, gb.ln1_b);
            dh = dx + da; // residual paths into the block input
            if (dl == l) add_depth_head(dh);
        }

        // Embedding backward.
        for (int t = 0; t < n; ++t) {
            const auto & in = inputs[size_t(t)];
            g.pos_embed.col(t) += dh.col(t);
            switch (in.kind) {
            case PosKind::kToken:
                g.tok_embed.col(in.token_id) += dh.col(t);
                break;
            case PosKind::kImage: {
                Vec<T> f(cfg.image_features);
                for (int i = 0; i < cfg.image_features; ++i) f(i) = T(in.vec[size_t(i)]);
                g.img_w += dh.col(t) * f.transpose();
                g.img_b += dh.col(t);
                break;
            }
            case PosKind::kDepthCont: {
                Vec<T> z(cfg.target_dim);
                for (int i = 0; i < cfg.target_dim; ++i) z(i) = T(in.vec[size_t(i)]);
                g.tok_embed.col(Vocabulary::DEPTH_TOKEN) += dh.col(t);
                g.zin_w += dh.col(t) * z.transpose();
                g.zin_b += dh.col(t);
                break;
            }
            }
        }
        return g;
    }

    // Runs one new position through the stack, appending to the cache.
    // Returns the top hidden column (pre final LN) and the logits column.
    struct StepOut {
        Vec<T> hidden;
        Vec<T> logits;
        Vec<T> depth_hidden;
    };
    StepOut step(const InputPos & input, KVCache<T> & cache) const {
        const int hd = cfg.head_dim();
        const T scale = T(1) / std::sqrt(T(hd));
        if (cache.k.empty()) {
            cache.k.resize(size_t(cfg.layers));
            cache.v.resize(size_t(cfg.layers));
        }
        Mat<T> xm = embed({input}, cache.len);
        Vec<T> x = xm.col(0);
        StepOut out;
        const int dl = cfg.resolved_depth_layer();
        if (dl == 0) out.depth_hidden = x;
        for (int l = 0; l < cfg.layers; ++l) {
            const auto & blk = params.blocks[size_t(l)];
            Mat<T> xc = x;
            Mat<T> xhat, ln1;
            Vec<T> inv;
            detail::layer_norm(xc, blk.ln1_g, blk.ln1_b, xhat, ln1, inv);
            Vec<T> q = blk.wq * ln1.col(0) + blk.bq;
            Vec<T> k = blk.wk * ln1.col(0) + blk.bk;
            Vec<T> v = blk.wv * ln1.col(0) + blk.bv;
            auto & K = cache.k[size_t(l)];
            auto & V = cache.v[size_t(l)];
            K.conservativeResize(cfg.width, cache.len + 1);
            V.conservativeResize(cfg.width, cache.len + 1);
            K.col(cache.len) = k;
            V.col(cache.len) = v;
            Vec<T> concat(cfg.width);
            for (int h = 0; h < cfg.heads; ++h) {
                auto qh = q.segment(h * hd, hd);
                auto kh = K.middleRows(h * hd, hd);
                auto vh = V.middleRows(h * hd, hd);
                Vec<T> s = (kh.leftCols(cache.len + 1).transpose() * qh) * scale;
                T mx = s.maxCoeff();
                Vec<T> e = (s.array() - mx).exp();
                e /= e.sum();
                concat.segment(h * hd, hd) = vh.leftCols(cache.len + 1) * e;
            }
            Vec<T> a = x + blk.wo * concat + blk.bo;
            Mat<T> ac = a;
            Mat<T> xhat2, ln2;
            Vec<T> inv2;
            detail::layer_norm(ac, blk.ln2_g, blk.ln2_b, xhat2, ln2, inv2);
            Vec<T> pre = blk.w1 * ln2.col(0) + blk.b1;
            Vec<T> act = pre.unaryExpr([](T xx) { return detail::gelu(xx); });
            x = a + blk.w2 * act + blk.b2;
            if (dl == l + 1) out.depth_hidden = x;
        }
        ++cache.len;
        out.hidden = x;
        if (cfg.layers > 0) {
            Mat<T> xc = x;
            Mat<T> xhat, ln;
            Vec<T> inv;
            detail::layer_norm(xc, params.fln_g, params.fln_b, xhat, ln, inv);
            out.logits = params.lm_w * ln.col(0) + params.lm_b;
        } else {
            out.logits = params.lm_w * x + params.lm_b;
        }
        return out;
    }

    // Constrained decode after a frozen prefix: DEPTH_START is forced, the
    // span runs for exactly policy.length() slots (ids constrained to the
    // depth block in discrete mode), DEPTH_END is forced, then free greedy
    // decoding until EOS or the budget runs out.
    GenerateResult generate(const std::vector<InputPos> & prefix, const Vocabulary & vocab,
                            SpanPolicy & policy, const GenerateOptions & opts) const {
        const int span_n = policy.length();
        const int need = span_n + 6; // START span END ( letter ) EOS
        if (opts.response_budget < need)
            throw DecodeBudgetExceeded("response budget " + std::to_string(opts.response_budget) +
                                       " cannot fit " + std::to_string(need) + " tokens");
        if (int(prefix.size()) + need > cfg.context)
            throw ContextOverflow("prefix plus response exceeds the model context");
        if (opts.discrete && vocab.depth_block_size < 1)
            throw WrongMode("discrete decode requires a depth block in the vocabulary");

        GenerateResult res;
        res.consumed_span = Grid(span_n, cfg.target_dim);
        res.predicted_span = Grid(span_n, cfg.target_dim);

        std::vector<InputPos> seq = prefix;
        KVCache<T> cache;
        Vec<T> logits;
        Vec<T> depth_hidden;
        auto run_last = [&](int from) {
            if (opts.use_kv_cache) {
                for (size_t t = size_t(from); t < seq.size(); ++t) {
                    auto out = step(seq[t], cache);
                    logits = out.logits;
                    depth_hidden = out.depth_hidden;
                }
            } else {
                auto acts = forward(seq);
                logits = acts.logits.col(seq.size() - 1);
                depth_hidden = acts.hiddens[size_t(cfg.resolved_depth_layer())].col(seq.size() - 1);
            }
        };
        run_last(0);

        auto emit = [&](int id, PosKind kind, std::vector<float> vec = {}) {
            res.tokens.push_back(id);
            seq.push_back(InputPos{kind, id, std::move(vec)});
            run_last(int(seq.size()) - 1);
        };

        emit(Vocabulary::DEPTH_START, PosKind::kToken);
        for (int slot = 0; slot < span_n; ++slot) {
            if (opts.discrete) {
                int best = vocab.depth_block_begin;
                T best_v = logits(vocab.depth_block_begin);
                for (int k = 1; k < vocab.depth_block_size; ++k) {
                    if (logits(vocab.depth_block_begin + k) > best_v) {
                        best_v = logits(vocab.depth_block_begin + k);
                        best = vocab.depth_block_begin + k;
                    }
                }
                res.predicted_ids.push_back(best);
                int fed = policy.next_id(slot, best);
                if (!vocab.is_depth_id(fed))
                    throw WrongMode("span policy returned a non-depth id in discrete mode");
                res.consumed_ids.push_back(fed);
                emit(fed, PosKind::kToken);
            } else {
                Vec<T> zh = depth_head(Mat<T>(depth_hidden)).col(0);
                std::vector<float> pred(size_t(cfg.target_dim));
                for (int i = 0; i < cfg.target_dim; ++i) {
                    pred[size_t(i)] = float(zh(i));
                    res.predicted_span.at(slot, i) = float(zh(i));
                }
                std::vector<float> fed = policy.next_vec(slot, pred);
                if (int(fed.size()) != cfg.target_dim)
                    throw ShapeMismatch("span policy vector width mismatch");
                for (int i = 0; i < cfg.target_dim; ++i) res.consumed_span.at(slot, i) = fed[size_t(i)];
                emit(Vocabulary::DEPTH_TOKEN, PosKind::kDepthCont, std::move(fed));
            }
        }
        emit(Vocabulary::DEPTH_END, PosKind::kToken);

        while (int(res.tokens.size()) < opts.response_budget) {
            int best = 0;
            T best_v = logits(0);
            for (int id = 1; id < cfg.vocab; ++id)
                if (logits(id) > best_v) {
                    best_v = logits(id);
                    best = id;
                }
            if (best == Vocabulary::EOS) {
                res.tokens.push_back(best);
                res.hit_eos = true;
                break;
            }
            if (int(seq.size()) + 1 >= cfg.context) break;
            emit(best, PosKind::kToken);
        }
        return res;
    }
};

using Model = ModelT<float>;

// Checkpoint file: magic "TRTM", u32 version, u32 json length, config json,
// u32 tensor count, then per tensor a u32 name length, the name, u32 rows,
// u32 cols, and rows*cols float32 values in column-major order.
inline constexpr uint32_t kCheckpointVersion = 1;
void save_checkpoint(const std::string & path, const Model & m);
Model load_checkpoint(const std::string & path);

} // namespace trtlab

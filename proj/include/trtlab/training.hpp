#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "trtlab/depth_targets.hpp"
#include "trtlab/errors.hpp"
#include "trtlab/features.hpp"
#include "trtlab/model.hpp"

namespace trtlab {

enum class DepthLossKind { kMse, kCosine, kCrossEntropy };

template <typename T>
struct LossOutput {
    double l_lm = 0.0;
    double l_depth = 0.0;
    double total = 0.0;
    bool answer_correct = false;
    Mat<T> dlogits; // V x N, d(total)/d(logits)
    Mat<T> dzhat;   // D x N, d(total)/d(depth head output)
};

// Language loss: mean cross entropy over the supervised response positions.
// Depth loss: MSE or cosine against the continuous span targets at the span
// slots, or cross entropy through the LM head at the discrete span ids.
// total = l_lm + lambda * l_depth, and the returned gradients are of total.
template <typename T>
LossOutput<T> compute_losses(const Activations<T> & acts, const BuiltSequence & seq,
                             DepthLossKind kind, double lambda) {
    const int n = seq.size();
    const int v = int(acts.logits.rows());
    const int d = int(acts.zhat.rows());
    const bool discrete = !seq.span_ids.empty();
    if (kind == DepthLossKind::kCrossEntropy && !discrete)
        throw WrongMode("cross entropy depth loss requires discrete spans");
    if (kind != DepthLossKind::kCrossEntropy && discrete)
        throw WrongMode("continuous depth losses require continuous spans");

    LossOutput<T> out;
    out.dlogits = Mat<T>::Zero(v, n);
    out.dzhat = Mat<T>::Zero(d, n);

    int n_lm = 0;
    for (int t = 0; t < n; ++t)
        if (seq.lm_target[size_t(t)] >= 0) ++n_lm;
    if (n_lm == 0) throw ShapeMismatch("sequence has no supervised positions");

    auto softmax_col = [&](int t) {
        Vec<T> p = acts.logits.col(t);
        T mx = p.maxCoeff();
        p = (p.array() - mx).exp();
        p /= p.sum();
        return p;
    };
    auto ce_col = [&](int t, int target, double & loss_acc, double weight) {
        Vec<T> p = softmax_col(t);
        loss_acc += -std::log(std::max(double(p(target)), 1e-300));
        for (int i = 0; i < v; ++i) out.dlogits(i, t) += T(weight) * p(i);
        out.dlogits(target, t) -= T(weight);
    };

    for (int t = 0; t < n; ++t) {
        int target = seq.lm_target[size_t(t)];
        if (target < 0) continue;
        ce_col(t, target, out.l_lm, 1.0 / n_lm);
        if (t == seq.answer_pos) {
            int best = 0;
            for (int i = 1; i < v; ++i)
                if (acts.logits(i, t) > acts.logits(best, t)) best = i;
            out.answer_correct = best == target;
        }
    }
    out.l_lm /= n_lm;

    const int k_span = seq.span_len;
    for (int t = 0; t < n; ++t) {
        int slot = seq.depth_slot[size_t(t)];
        if (slot < 0) continue;
        if (kind == DepthLossKind::kMse) {
            for (int j = 0; j < d; ++j) {
                double diff = double(acts.zhat(j, t)) - seq.span_targets.at(slot, j);
                out.l_depth += diff * diff / (double(k_span) * d);
                out.dzhat(j, t) += T(lambda * 2.0 * diff / (double(k_span) * d));
            }
        } else if (kind == DepthLossKind::kCosine) {
            double na = 0.0, nb = 0.0, dot = 0.0;
            for (int j = 0; j < d; ++j) {
                double a = acts.zhat(j, t), b = seq.span_targets.at(slot, j);
                na += a * a;
                nb += b * b;
                dot += a * b;
            }
            na = std::sqrt(na);
            nb = std::sqrt(nb);
            if (na > 0.0 && nb > 0.0) {
                double cosv = dot / (na * nb);
                out.l_depth += (1.0 - cosv) / k_span;
                for (int j = 0; j < d; ++j) {
                    double a = acts.zhat(j, t), b = seq.span_targets.at(slot, j);
                    out.dzhat(j, t) +=
                        T(lambda / k_span * (cosv * a / (na * na) - b / (na * nb)));
                }
            } else {
                out.l_depth += 1.0 / k_span;
            }
        } else {
            double ce = 0.0;
            ce_col(t, seq.span_ids[size_t(slot)], ce, lambda / k_span);
            out.l_depth += ce / k_span;
        }
    }
    out.total = out.l_lm + lambda * out.l_depth;
    return out;
}

// Flat views over every parameter, in for_each order.
template <typename T>
struct ParamSlabs {
    std::vector<T *> data;
    std::vector<long> size;
    long total = 0;

    explicit ParamSlabs(ParamSet<T> & p) {
        p.for_each([this](const std::string &, auto & w) {
            data.push_back(w.data());
            size.push_back(long(w.size()));
            total += long(w.size());
        });
    }
};

// Central-difference check of the full backward pass at randomly probed
// coordinates. Returns the worst relative error observed.
template <typename T>
double grad_check(ModelT<T> & model, const BuiltSequence & seq, DepthLossKind kind, double lambda,
                  double eps, int probes, uint64_t seed) {
    auto acts = model.forward(seq.inputs);
    auto ls = compute_losses(acts, seq, kind, lambda);
    ParamSet<T> grads = model.backward(seq.inputs, acts, ls.dlogits, ls.dzhat);

    ParamSlabs<T> ps(model.params);
    ParamSlabs<T> gs(grads);
    auto loss_at = [&]() {
        auto a = model.forward(seq.inputs);
        return compute_losses(a, seq, kind, lambda).total;
    };

    Rng rng = Rng::derive(seed, {0x6763});
    double worst = 0.0;
    for (int probe = 0; probe < probes; ++probe) {
        size_t slab = size_t(rng.uniform_int(0, int64_t(ps.data.size()) - 1));
        long idx = long(rng.uniform_int(0, int64_t(ps.size[slab]) - 1));
        T saved = ps.data[slab][idx];
        ps.data[slab][idx] = saved + T(eps);
        double up = loss_at();
        ps.data[slab][idx] = saved - T(eps);
        double down = loss_at();
        ps.data[slab][idx] = saved;
        double numeric = (up - down) / (2.0 * eps);
        double analytic = double(gs.data[slab][idx]);
        // Coordinates with near-zero gradients are held to absolute error at
        // the floor scale; central differences on an O(1) loss cannot resolve
        // relative error below it.
        double denom = std::max(1e-6, std::fabs(numeric) + std::fabs(analytic));
        worst = std::max(worst, std::fabs(numeric - analytic) / denom);
    }
    return worst;
}

struct TrainConfig {
    int epochs = 10;
    int batch_size = 8;
    double lr = 3e-4;
    double warmup_frac = 0.03;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double lambda = 1.0;
    DepthLossKind depth_loss = DepthLossKind::kMse;
    uint64_t init_seed = 1;
    void validate() const {
        if (epochs < 1 || batch_size < 1) throw InvalidConfig("bad epoch or batch settings");
        if (lr <= 0.0 || warmup_frac < 0.0 || warmup_frac > 1.0)
            throw InvalidConfig("bad learning rate schedule");
        if (lambda < 0.0) throw InvalidConfig("lambda must be nonnegative");
    }
};

struct TrainSetup {
    ModelConfig model; // vocab is filled in from the built vocabulary
    TargetConfig targets;
    ImageInterfaceConfig image;
    TrainConfig train;
};

struct EpochLog {
    int epoch = 0;
    long step = 0;
    double l_lm = 0.0;
    double l_depth = 0.0;
    double total = 0.0;
    double train_acc = 0.0;
    long wall_ms = 0;
};

struct TrainResult {
    std::vector<EpochLog> logs;
    std::string final_checkpoint;
    std::string codebook_path; // empty in continuous mode
    int vocab_size = 0;
};

// Trains on every example of the dataset in index order with serial gradient
// accumulation, Adam updates on a constant rate after linear warmup, one
// checkpoint per epoch, and a jsonl epoch log. A non-finite batch loss
// raises Divergence; the last completed epoch checkpoint stays on disk.
TrainResult train_model(TrainSetup setup, const std::string & dataset_dir,
                        const std::string & out_dir,
                        const std::function<void(const EpochLog &)> & on_epoch = nullptr);

} // namespace trtlab

#include "trtlab/training.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "trtlab/scenegen.hpp"

namespace trtlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Adam {
  public:
    Adam(const ParamSlabs<float> & shape, double b1, double b2, double eps)
        : b1_(b1), b2_(b2), eps_(eps) {
        m_.resize(shape.data.size());
        v_.resize(shape.data.size());
        for (size_t s = 0; s < shape.data.size(); ++s) {
            m_[s].assign(size_t(shape.size[s]), 0.0f);
            v_[s].assign(size_t(shape.size[s]), 0.0f);
        }
    }

    void step(ParamSlabs<float> & params, const ParamSlabs<float> & grads, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, double(t_));
        const double bc2 = 1.0 - std::pow(b2_, double(t_));
        for (size_t s = 0; s < params.data.size(); ++s) {
            float * p = params.data[s];
            const float * g = grads.data[s];
            for (long i = 0; i < params.size[s]; ++i) {
                float & m = m_[s][size_t(i)];
                float & v = v_[s][size_t(i)];
                m = float(b1_ * m + (1.0 - b1_) * g[i]);
                v = float(b2_ * v + (1.0 - b2_) * double(g[i]) * g[i]);
                double mhat = m / bc1;
                double vhat = v / bc2;
                p[i] -= float(lr * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    long steps() const { return t_; }

  private:
    double b1_, b2_, eps_;
    long t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

void accumulate(ParamSlabs<float> & acc, const ParamSlabs<float> & g) {
    for (size_t s = 0; s < acc.data.size(); ++s)
        for (long i = 0; i < acc.size[s]; ++i) acc.data[s][i] += g.data[s][i];
}

void scale(ParamSlabs<float> & g, float factor) {
    for (size_t s = 0; s < g.data.size(); ++s)
        for (long i = 0; i < g.size[s]; ++i) g.data[s][i] *= factor;
}

void zero(ParamSlabs<float> & g) {
    for (size_t s = 0; s < g.data.size(); ++s)
        for (long i = 0; i < g.size[s]; ++i) g.data[s][i] = 0.0f;
}

} // namespace

TrainResult train_model(TrainSetup setup, const std::string & dataset_dir,
                        const std::string & out_dir,
                        const std::function<void(const EpochLog &)> & on_epoch) {
    setup.train.validate();
    setup.targets.validate();
    setup.image.validate();
    fs::create_directories(out_dir);

    DatasetMeta meta = read_dataset_meta(dataset_dir);
    auto examples = read_examples((fs::path(dataset_dir) / "dataset.jsonl").string());
    if (examples.empty()) throw InsufficientData("dataset has no examples");

    Vocabulary vocab =
        Vocabulary::build(setup.targets.discrete ? setup.targets.codebook_size : 0);
    setup.model.vocab = vocab.size();
    setup.model.validate();

    TrainResult result;
    result.vocab_size = vocab.size();

    Codebook codebook;
    if (setup.targets.discrete) {
        std::vector<Grid> resized;
        resized.reserve(examples.size());
        for (const auto & ex : examples)
            resized.push_back(resize_targets(load_or_encode(dataset_dir, ex.scene_id, setup.targets),
                                             setup.targets.discrete_tokens));
        codebook = train_codebook(resized, setup.targets.codebook_size,
                                  Rng::derive(setup.train.init_seed, {0x6362}).next_u64());
        result.codebook_path = (fs::path(out_dir) / "codebook.trtc").string();
        write_codebook(result.codebook_path, codebook);
    }

    std::vector<PreparedExample> prepared;
    prepared.reserve(examples.size());
    for (const auto & ex : examples)
        prepared.push_back(prepare_example(ex, dataset_dir, meta, vocab, setup.targets, setup.image,
                                           setup.targets.discrete ? &codebook : nullptr));
    for (const auto & prep : prepared)
        if (prep.seq.size() + 1 > setup.model.context)
            throw ContextOverflow(prep.ex.example_id + " needs " +
                                  std::to_string(prep.seq.size() + 1) + " positions");

    Model model = Model::init(setup.model, setup.train.init_seed);
    ParamSlabs<float> param_slabs(model.params);
    Adam adam(param_slabs, setup.train.beta1, setup.train.beta2, setup.train.adam_eps);

    const long n = long(prepared.size());
    const long batches_per_epoch = (n + setup.train.batch_size - 1) / setup.train.batch_size;
    const long total_steps = batches_per_epoch * setup.train.epochs;
    const long warmup_steps =
        std::max<long>(1, std::lround(setup.train.warmup_frac * double(total_steps)));

    ParamSet<float> grad_acc = model.zero_grads();
    ParamSlabs<float> acc_slabs(grad_acc);

    std::ofstream log_out(fs::path(out_dir) / "train_log.jsonl", std::ios::binary);
    if (!log_out) throw DataError("cannot write train_log.jsonl in " + out_dir);

    for (int epoch = 1; epoch <= setup.train.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        double sum_lm = 0.0, sum_depth = 0.0, sum_total = 0.0;
        long correct = 0;
        for (long start = 0; start < n; start += setup.train.batch_size) {
            const long stop = std::min(n, start + setup.train.batch_size);
            zero(acc_slabs);
            double batch_total = 0.0;
            for (long i = start; i < stop; ++i) {
                const auto & prep = prepared[size_t(i)];
                auto acts = model.forward(prep.seq.inputs);
                auto ls =
                    compute_losses(acts, prep.seq, setup.train.depth_loss, setup.train.lambda);
                sum_lm += ls.l_lm;
                sum_depth += ls.l_depth;
                sum_total += ls.total;
                batch_total += ls.total;
                if (ls.answer_correct) ++correct;
                ParamSet<float> g = model.backward(prep.seq.inputs, acts, ls.dlogits, ls.dzhat);
                ParamSlabs<float> gs(g);
                accumulate(acc_slabs, gs);
            }
            if (!std::isfinite(batch_total))
                throw Divergence("non-finite loss in epoch " + std::to_string(epoch));
            scale(acc_slabs, 1.0f / float(stop - start));
            const long s = adam.steps() + 1;
            const double lr_now =
                setup.train.lr * std::min(1.0, double(s) / double(warmup_steps));
            adam.step(param_slabs, acc_slabs, lr_now);
        }

        EpochLog log;
        log.epoch = epoch;
        log.step = adam.steps();
        log.l_lm = sum_lm / double(n);
        log.l_depth = sum_depth / double(n);
        log.total = sum_total / double(n);
        log.train_acc = double(correct) / double(n);
        log.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
        result.logs.push_back(log);

        char name[48];
        snprintf(name, sizeof name, "checkpoint_ep%03d.trtm", epoch);
        save_checkpoint((fs::path(out_dir) / name).string(), model);

        log_out << json{{"epoch", log.epoch},         {"step", log.step},
                        {"l_lm", log.l_lm},           {"l_depth", log.l_depth},
                        {"total", log.total},         {"train_acc", log.train_acc},
                        {"wall_ms", log.wall_ms}}
                       .dump()
                << '\n'
                << std::flush;
        if (on_epoch) on_epoch(log);
    }

    result.final_checkpoint = (fs::path(out_dir) / "final.trtm").string();
    save_checkpoint(result.final_checkpoint, model);
    return result;
}

} // namespace trtlab

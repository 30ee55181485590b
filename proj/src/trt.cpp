#include "trtlab/trt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "trtlab/errors.hpp"

namespace trtlab {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Interventions
// ---------------------------------------------------------------------------

const char * intervention_name(InterventionKind kind)
{
    switch (kind) {
    case InterventionKind::kIdentity: return "identity";
    case InterventionKind::kZero: return "zero";
    case InterventionKind::kRandom: return "random";
    case InterventionKind::kRandomGtDist: return "random_gt_dist";
    case InterventionKind::kRandomModelDist: return "random_model_dist";
    case InterventionKind::kFirstRepeat: return "first_repeat";
    case InterventionKind::kOracle: return "oracle";
    }
    return "identity";
}

InterventionKind parse_intervention_name(const std::string & name)
{
    if (name == "identity" || name == "model") return InterventionKind::kIdentity;
    if (name == "zero") return InterventionKind::kZero;
    if (name == "random") return InterventionKind::kRandom;
    if (name == "random_gt_dist") return InterventionKind::kRandomGtDist;
    if (name == "random_model_dist") return InterventionKind::kRandomModelDist;
    if (name == "first_repeat") return InterventionKind::kFirstRepeat;
    if (name == "oracle" || name == "gt") return InterventionKind::kOracle;
    throw UsageError("unknown intervention \"" + name +
                     "\"; valid: identity, zero, random, random_gt_dist, random_model_dist, "
                     "first_repeat, oracle (aliases: gt, model)");
}

std::vector<Intervention> read_suite_spec(const std::string & path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open suite spec " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception & e) {
        throw ParseError(path + ": " + e.what(), 0);
    }
    if (!j.is_array()) throw SchemaMismatch("suite spec " + path + " must be a JSON array");
    std::vector<Intervention> out;
    for (const json & item : j) {
        Intervention iv;
        if (item.is_string()) {
            iv.kind = parse_intervention_name(item.get<std::string>());
        } else if (item.is_object()) {
            try {
                iv.kind = parse_intervention_name(item.at("kind").get<std::string>());
                if (item.contains("count_matched")) iv.count_matched = item.at("count_matched").get<bool>();
                if (item.contains("kv_off")) iv.kv_off = item.at("kv_off").get<bool>();
                if (item.contains("seed")) iv.seed = item.at("seed").get<uint64_t>();
            } catch (const json::exception & e) {
                throw SchemaMismatch("suite spec " + path + ": " + e.what());
            }
        } else {
            throw SchemaMismatch("suite spec " + path + ": entries must be names or objects");
        }
        out.push_back(iv);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Span replacement
// ---------------------------------------------------------------------------

namespace {

uint64_t fnv1a_str(const std::string & s)
{
    return fnv1a(s.data(), s.size());
}

void entry_stats(const Grid & g, double * l2, double * mean, double * stddev)
{
    double sum = 0.0, sq = 0.0;
    for (float v : g.data) {
        sum += v;
        sq += double(v) * double(v);
    }
    const double n = double(g.size());
    *l2 = std::sqrt(sq);
    *mean = n > 0 ? sum / n : 0.0;
    *stddev = n > 0 ? std::sqrt(std::max(0.0, sq / n - (sum / n) * (sum / n))) : 0.0;
}

void id_stats(const std::vector<int> & ids, const Vocabulary & vocab, double * l2, double * mean,
              double * stddev)
{
    double sum = 0.0, sq = 0.0;
    for (int id : ids) {
        const double v = double(id - vocab.depth_block_begin);
        sum += v;
        sq += v * v;
    }
    const double n = double(ids.size());
    *l2 = std::sqrt(sq);
    *mean = n > 0 ? sum / n : 0.0;
    *stddev = n > 0 ? std::sqrt(std::max(0.0, sq / n - (sum / n) * (sum / n))) : 0.0;
}

double stat_at(const SpanStats & st, const std::vector<double> & values, int k, int j)
{
    switch (st.pooling) {
    case SpanPooling::kSpanScalar: return values[0];
    case SpanPooling::kPerDimension: return values[size_t(j)];
    case SpanPooling::kPerVector:
        return values[size_t(std::min(k, st.k - 1)) * size_t(st.dim) + size_t(j)];
    }
    return values[0];
}

} // namespace

ReplacedSpan make_replacement(const Grid & span, const Grid * gt, const Grid * model_span,
                              const Intervention & iv, SpanPooling pooling, Rng & rng,
                              int matched_count)
{
    if (span.height < 1 || span.width < 1)
        throw ShapeMismatch("replacement requires a nonempty original span");
    const int d = span.width;
    if (gt && gt->width != d) throw ShapeMismatch("ground-truth span dimension mismatch");
    if (model_span && model_span->width != d)
        throw ShapeMismatch("model span dimension mismatch");
    const int n = matched_count >= 0 ? matched_count : span.height;
    if (n < 1) throw ShapeMismatch("count-matched length must be at least 1");

    ReplacedSpan out;
    out.kind = iv.kind;
    out.original = span;
    out.matched_count = matched_count;

    switch (iv.kind) {
    case InterventionKind::kIdentity:
        out.replacement = resize_tokens_linear(span, n);
        break;
    case InterventionKind::kZero:
        out.replacement = Grid(n, d, 0.0f);
        break;
    case InterventionKind::kRandom: {
        Grid r(n, d);
        for (int k = 0; k < n; ++k)
            for (int j = 0; j < d; ++j) r.at(k, j) = float(rng.gaussian());
        out.replacement = r;
        break;
    }
    case InterventionKind::kRandomGtDist:
    case InterventionKind::kRandomModelDist: {
        const bool wants_gt = iv.kind == InterventionKind::kRandomGtDist;
        const Grid * src = wants_gt ? gt : model_span;
        if (wants_gt && !src) throw MissingOracle("random_gt_dist requires a ground-truth span");
        if (!wants_gt && !src)
            throw MissingModelSpan("random_model_dist requires the model's predicted span");
        const SpanStats st = span_statistics({*src}, pooling);
        Grid r(n, d);
        for (int k = 0; k < n; ++k)
            for (int j = 0; j < d; ++j)
                r.at(k, j) =
                    float(rng.gaussian(stat_at(st, st.mean, k, j), stat_at(st, st.stddev, k, j)));
        out.replacement = r;
        break;
    }
    case InterventionKind::kFirstRepeat: {
        Grid r(n, d);
        for (int k = 0; k < n; ++k)
            for (int j = 0; j < d; ++j) r.at(k, j) = span.at(0, j);
        out.replacement = r;
        break;
    }
    case InterventionKind::kOracle:
        if (!gt) throw MissingOracle("oracle requires a ground-truth span");
        out.replacement = resize_tokens_linear(*gt, n);
        break;
    }

    entry_stats(out.original, &out.norm_before, &out.mean_before, &out.std_before);
    entry_stats(out.replacement, &out.norm_after, &out.mean_after, &out.std_after);
    return out;
}

ReplacedSpan make_replacement(const std::vector<int> & span, const std::vector<int> * gt,
                              const std::vector<int> * model_span, const Intervention & iv,
                              const Vocabulary & vocab, Rng & rng, int matched_count)
{
    if (span.empty()) throw ShapeMismatch("replacement requires a nonempty original span");
    auto check_ids = [&](const std::vector<int> & ids, const char * what) {
        for (int id : ids)
            if (!vocab.is_depth_id(id))
                throw WrongMode(std::string(what) + " contains a non-depth token id");
    };
    check_ids(span, "original span");
    if (gt) check_ids(*gt, "ground-truth span");
    if (model_span) check_ids(*model_span, "model span");
    const int n = matched_count >= 0 ? matched_count : int(span.size());
    if (n < 1) throw ShapeMismatch("count-matched length must be at least 1");

    auto fit = [&](std::vector<int> ids) {
        if (int(ids.size()) > n) ids.resize(size_t(n));
        while (int(ids.size()) < n) ids.push_back(ids.back());
        return ids;
    };

    ReplacedSpan out;
    out.kind = iv.kind;
    out.original_ids = span;
    out.matched_count = matched_count;

    switch (iv.kind) {
    case InterventionKind::kIdentity:
        out.replacement_ids = fit(span);
        break;
    case InterventionKind::kZero:
        out.replacement_ids.assign(size_t(n), vocab.depth_id(0));
        break;
    case InterventionKind::kRandom:
        for (int k = 0; k < n; ++k)
            out.replacement_ids.push_back(
                vocab.depth_id(int(rng.uniform_int(0, vocab.depth_block_size - 1))));
        break;
    case InterventionKind::kRandomGtDist:
    case InterventionKind::kRandomModelDist: {
        const bool wants_gt = iv.kind == InterventionKind::kRandomGtDist;
        const std::vector<int> * src = wants_gt ? gt : model_span;
        if (wants_gt && !src) throw MissingOracle("random_gt_dist requires a ground-truth span");
        if (!wants_gt && !src)
            throw MissingModelSpan("random_model_dist requires the model's predicted span");
        for (int k = 0; k < n; ++k)
            out.replacement_ids.push_back((*src)[size_t(rng.uniform_int(0, int64_t(src->size()) - 1))]);
        break;
    }
    case InterventionKind::kFirstRepeat:
        out.replacement_ids.assign(size_t(n), span[0]);
        break;
    case InterventionKind::kOracle:
        if (!gt) throw MissingOracle("oracle requires a ground-truth span");
        out.replacement_ids = fit(*gt);
        break;
    }

    id_stats(out.original_ids, vocab, &out.norm_before, &out.mean_before, &out.std_before);
    id_stats(out.replacement_ids, vocab, &out.norm_after, &out.mean_after, &out.std_after);
    return out;
}

// ---------------------------------------------------------------------------
// Running examples
// ---------------------------------------------------------------------------

const char * span_source_name(SpanSource source)
{
    return source == SpanSource::kDataset ? "dataset" : "self";
}

SpanSource parse_span_source(const std::string & name)
{
    if (name == "dataset") return SpanSource::kDataset;
    if (name == "self") return SpanSource::kSelf;
    throw UsageError("unknown span source \"" + name + "\"; valid: dataset, self");
}

uint64_t prefix_fingerprint(const std::vector<InputPos> & prefix)
{
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const InputPos & p : prefix) {
        const int32_t kind = int32_t(p.kind);
        const int32_t tok = int32_t(p.token_id);
        h = fnv1a(&kind, sizeof kind, h);
        h = fnv1a(&tok, sizeof tok, h);
        if (!p.vec.empty()) h = fnv1a(p.vec.data(), p.vec.size() * sizeof(float), h);
    }
    return h;
}

namespace {

struct FixedSpanPolicy final : SpanPolicy {
    const Grid * rows = nullptr;
    const std::vector<int> * ids = nullptr;

    int length() const override { return rows ? rows->height : int(ids->size()); }
    std::vector<float> next_vec(int slot, const std::vector<float> &) override {
        std::vector<float> v(size_t(rows->width));
        for (int j = 0; j < rows->width; ++j) v[size_t(j)] = rows->at(slot, j);
        return v;
    }
    int next_id(int slot, int) override { return (*ids)[size_t(slot)]; }
};

struct SelfFeedbackPolicy final : SpanPolicy {
    int n = 0;

    int length() const override { return n; }
    std::vector<float> next_vec(int, const std::vector<float> & model_pred) override {
        return model_pred;
    }
    int next_id(int, int model_pred_id) override { return model_pred_id; }
};

std::vector<InputPos> frozen_prefix(const PreparedExample & pe)
{
    return {pe.seq.inputs.begin(), pe.seq.inputs.begin() + pe.seq.prompt_len};
}

int resolve_budget(const SuiteOptions & options, int span_n)
{
    return options.response_budget > 0 ? options.response_budget : span_n + 10;
}

int dataset_span_length(const PreparedExample & pe, bool discrete)
{
    return discrete ? int(pe.span_ids.size()) : pe.span_z.height;
}

void check_mode(const PreparedExample & pe, bool discrete)
{
    if (discrete && pe.span_ids.empty())
        throw WrongMode(pe.ex.example_id + ": discrete suite over a continuous span");
    if (!discrete && pe.span_z.height < 1)
        throw WrongMode(pe.ex.example_id + ": continuous suite over a discrete span");
}

void score_run(ExampleRun & run, const Vocabulary & vocab, const Example & ex)
{
    run.decoded = vocab.decode(run.gen.tokens);
    run.parsed = parse_answer(run.decoded);
    run.correct = run.parsed.ok() && run.parsed.letter == ex.answer;
}

// Stand-in for the reference pass when nothing consumes model predictions:
// under the dataset span source the baseline consumes exactly the resolved
// ground-truth span, so the consumed content is known without generating.
ExampleRun reference_without_pass(const PreparedExample & pe, const SuiteOptions & options)
{
    check_mode(pe, options.discrete);
    ExampleRun ref;
    ref.gen.consumed_span = options.discrete ? Grid() : pe.span_z;
    ref.gen.consumed_ids = pe.span_ids;
    ref.prefix_hash = prefix_fingerprint(frozen_prefix(pe));
    return ref;
}

} // namespace

ExampleRun run_baseline(const Model & model, const Vocabulary & vocab, const PreparedExample & pe,
                        const SuiteOptions & options)
{
    check_mode(pe, options.discrete);
    const int span_n = dataset_span_length(pe, options.discrete);
    const std::vector<InputPos> prefix = frozen_prefix(pe);

    GenerateOptions gopts;
    gopts.use_kv_cache = !options.kv_off;
    gopts.discrete = options.discrete;
    gopts.response_budget = resolve_budget(options, span_n);

    ExampleRun run;
    run.prefix_hash = prefix_fingerprint(prefix);
    if (options.span_source == SpanSource::kSelf) {
        SelfFeedbackPolicy policy;
        policy.n = span_n;
        run.gen = model.generate(prefix, vocab, policy, gopts);
    } else {
        FixedSpanPolicy policy;
        if (options.discrete) policy.ids = &pe.span_ids;
        else policy.rows = &pe.span_z;
        run.gen = model.generate(prefix, vocab, policy, gopts);
    }
    score_run(run, vocab, pe.ex);
    return run;
}

InterventionRun run_intervention(const Model & model, const Vocabulary & vocab,
                                 const PreparedExample & pe, const ExampleRun & baseline,
                                 const Intervention & iv, const SuiteOptions & options)
{
    check_mode(pe, options.discrete);
    const bool kv_off = iv.kv_off || options.kv_off;
    const bool count_matched = iv.count_matched || options.count_matched;

    const std::vector<InputPos> prefix = frozen_prefix(pe);
    const uint64_t hash = prefix_fingerprint(prefix);
    if (hash != baseline.prefix_hash)
        throw PrefixMismatch(pe.ex.example_id + ": frozen prefix differs from the baseline pass");

    Rng rng = Rng::derive(options.suite_seed,
                          {fnv1a_str(pe.ex.example_id), fnv1a_str(intervention_name(iv.kind)),
                           iv.seed});

    InterventionRun out;
    int span_n = 0;
    if (options.discrete) {
        const std::vector<int> & consumed = baseline.gen.consumed_ids;
        if (consumed.empty()) throw ShapeMismatch(pe.ex.example_id + ": baseline consumed no span");
        const int matched = count_matched ? int(consumed.size()) : -1;
        const std::vector<int> * predicted =
            baseline.gen.predicted_ids.empty() ? nullptr : &baseline.gen.predicted_ids;
        out.span = make_replacement(consumed, &pe.span_ids, predicted, iv, vocab, rng, matched);
        span_n = int(out.span.replacement_ids.size());
    } else {
        const Grid & consumed = baseline.gen.consumed_span;
        if (consumed.height < 1) throw ShapeMismatch(pe.ex.example_id + ": baseline consumed no span");
        const int matched = count_matched ? consumed.height : -1;
        const Grid * predicted =
            baseline.gen.predicted_span.height > 0 ? &baseline.gen.predicted_span : nullptr;
        out.span = make_replacement(consumed, &pe.span_z, predicted, iv, options.pooling, rng, matched);
        span_n = out.span.replacement.height;
    }

    GenerateOptions gopts;
    gopts.use_kv_cache = !kv_off;
    gopts.discrete = options.discrete;
    gopts.response_budget = resolve_budget(options, span_n);

    FixedSpanPolicy policy;
    if (options.discrete) policy.ids = &out.span.replacement_ids;
    else policy.rows = &out.span.replacement;

    out.run.prefix_hash = hash;
    out.run.gen = model.generate(prefix, vocab, policy, gopts);
    score_run(out.run, vocab, pe.ex);
    return out;
}

TRTReport run_suite(const Model & model, const Vocabulary & vocab,
                    const std::vector<PreparedExample> & examples,
                    const std::vector<Intervention> & interventions, const SuiteOptions & options,
                    const std::string & audit_path)
{
    if (examples.empty()) throw InsufficientData("replacement suite over zero examples");
    if (interventions.empty()) throw UsageError("replacement suite needs at least one intervention");
    {
        std::set<InterventionKind> seen;
        for (const Intervention & iv : interventions)
            if (!seen.insert(iv.kind).second)
                throw DataError(std::string("duplicate intervention ") + intervention_name(iv.kind));
    }
    for (const PreparedExample & pe : examples) check_mode(pe, options.discrete);

    std::ofstream audit;
    if (!audit_path.empty()) {
        audit.open(audit_path, std::ios::binary | std::ios::trunc);
        if (!audit) throw DataError("cannot write audit log " + audit_path);
    }

    const bool need_pass1 =
        options.span_source == SpanSource::kSelf || options.count_matched ||
        std::any_of(interventions.begin(), interventions.end(), [](const Intervention & iv) {
            return iv.count_matched || iv.kind == InterventionKind::kRandomModelDist;
        });

    struct Tally {
        long long correct = 0;
        long long total = 0;
    };
    std::vector<std::map<std::string, Tally>> tallies(interventions.size());

    TRTReport report;
    for (const PreparedExample & pe : examples) {
        ExampleRun base;
        std::string base_error;
        try {
            base = need_pass1 ? run_baseline(model, vocab, pe, options)
                              : reference_without_pass(pe, options);
        } catch (const PrefixMismatch &) {
            throw;
        } catch (const DataError & e) {
            base_error = e.what();
        } catch (const NumericError & e) {
            base_error = e.what();
        }

        bool failed = !base_error.empty();
        for (size_t i = 0; i < interventions.size(); ++i) {
            bool correct = false;
            std::string error = base_error;
            ReplacedSpan span;
            ParsedAnswer parsed;
            if (base_error.empty()) {
                try {
                    InterventionRun r =
                        run_intervention(model, vocab, pe, base, interventions[i], options);
                    correct = r.run.correct;
                    span = r.span;
                    parsed = r.run.parsed;
                } catch (const PrefixMismatch &) {
                    throw;
                } catch (const DataError & e) {
                    error = e.what();
                } catch (const NumericError & e) {
                    error = e.what();
                }
            }
            if (!error.empty()) failed = true;

            Tally & t = tallies[i][pe.ex.subset];
            t.total += 1;
            if (correct) t.correct += 1;

            if (audit.is_open()) {
                json line;
                line["example_id"] = pe.ex.example_id;
                line["intervention"] = intervention_name(interventions[i].kind);
                line["span_norm_before"] = span.norm_before;
                line["span_norm_after"] = span.norm_after;
                line["answer"] = parsed.ok() ? std::string(1, parsed.letter) : std::string();
                line["correct"] = correct;
                if (!error.empty()) line["error"] = error;
                audit << line.dump() << "\n";
            }
        }
        if (failed) report.examples_failed += 1;
        else report.examples_scored += 1;
    }
    if (audit.is_open() && !audit) throw DataError("failed writing audit log " + audit_path);

    std::set<std::string> subset_names;
    for (const PreparedExample & pe : examples) subset_names.insert(pe.ex.subset);

    for (size_t i = 0; i < interventions.size(); ++i) {
        const std::string name = intervention_name(interventions[i].kind);
        std::vector<ReportRow> subset_rows;
        for (const std::string & subset : subset_names) {
            const Tally & t = tallies[i][subset];
            ReportRow row;
            row.intervention = name;
            row.subset = subset;
            row.correct = t.correct;
            row.total = t.total;
            row.accuracy = accuracy_percent(t.correct, t.total);
            subset_rows.push_back(row);
        }
        for (const ReportRow & row : subset_rows) report.rows.push_back(row);
        report.rows.push_back(average_row(name, subset_rows));
    }

    report.checkpoint = options.checkpoint_label;
    report.dataset = options.dataset_label;
    report.span_source = span_source_name(options.span_source);
    report.suite_seed = options.suite_seed;
    report.kv_cache = !options.kv_off;
    report.count_matched = options.count_matched;
    return report;
}

} // namespace trtlab

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trtlab/depth_targets.hpp"
#include "trtlab/eval.hpp"
#include "trtlab/features.hpp"
#include "trtlab/grid.hpp"
#include "trtlab/model.hpp"
#include "trtlab/rng.hpp"
#include "trtlab/vocab.hpp"

namespace trtlab {

// ---------------------------------------------------------------------------
// Interventions
// ---------------------------------------------------------------------------

enum class InterventionKind {
    kIdentity,
    kZero,
    kRandom,
    kRandomGtDist,
    kRandomModelDist,
    kFirstRepeat,
    kOracle,
};

const char * intervention_name(InterventionKind kind);

// Accepts canonical names plus the aliases "gt" (oracle) and "model"
// (identity). Throws UsageError listing the valid names.
InterventionKind parse_intervention_name(const std::string & name);

struct Intervention {
    InterventionKind kind = InterventionKind::kIdentity;
    bool count_matched = false;
    bool kv_off = false;
    uint64_t seed = 0;
};

// Suite spec file: a JSON array whose elements are either intervention names
// or objects {"kind": ..., "count_matched": ..., "kv_off": ..., "seed": ...}.
std::vector<Intervention> read_suite_spec(const std::string & path);

// ---------------------------------------------------------------------------
// Span replacement
// ---------------------------------------------------------------------------

struct ReplacedSpan {
    InterventionKind kind = InterventionKind::kIdentity;
    Grid original;     // (n0, D); unset in discrete mode
    Grid replacement;  // (n, D)
    std::vector<int> original_ids; // vocabulary ids; unset in continuous mode
    std::vector<int> replacement_ids;
    int matched_count = -1; // requested count-matched length, -1 when unused

    double norm_before = 0.0;
    double norm_after = 0.0;
    double mean_before = 0.0;
    double mean_after = 0.0;
    double std_before = 0.0;
    double std_after = 0.0;
};

// Builds the replacement for a continuous span. `span` is what the model
// consumed on the baseline pass; `gt` backs oracle and random_gt_dist,
// `model_span` (the model's own predictions) backs random_model_dist; either
// may be null when no requested kind needs it. Distribution-matched draws use
// span_statistics of the source span under `pooling`. When matched_count is
// >= 0 the replacement is resampled along the token axis to that length;
// otherwise it keeps the original length, resampling oracle content if the
// ground-truth token count differs.
ReplacedSpan make_replacement(const Grid & span, const Grid * gt, const Grid * model_span,
                              const Intervention & iv, SpanPooling pooling, Rng & rng,
                              int matched_count = -1);

// Discrete analog over vocabulary ids: zero is a constant run of the first
// depth id, random draws uniformly over the depth block, distribution-matched
// kinds resample i.i.d. from the source span's empirical id multiset, and
// count-matching truncates or repeats the last id. Audit statistics are over
// block-relative ids.
ReplacedSpan make_replacement(const std::vector<int> & span, const std::vector<int> * gt,
                              const std::vector<int> * model_span, const Intervention & iv,
                              const Vocabulary & vocab, Rng & rng, int matched_count = -1);

// ---------------------------------------------------------------------------
// Running examples
// ---------------------------------------------------------------------------

enum class SpanSource { kDataset, kSelf };

const char * span_source_name(SpanSource source);
SpanSource parse_span_source(const std::string & name);

struct SuiteOptions {
    SpanSource span_source = SpanSource::kDataset;
    uint64_t suite_seed = 0;
    bool discrete = false;
    bool kv_off = false;        // applied on top of each intervention's flag
    bool count_matched = false; // likewise
    SpanPooling pooling = SpanPooling::kSpanScalar;
    int response_budget = 0; // 0 derives span length + 10
    std::string checkpoint_label;
    std::string dataset_label;
};

// FNV-1a over the frozen prefix inputs (kind, token id, feature bytes). The
// hash covers what the model is fed, not hidden states, so it is invariant
// to the cache setting.
uint64_t prefix_fingerprint(const std::vector<InputPos> & prefix);

struct ExampleRun {
    GenerateResult gen;
    uint64_t prefix_hash = 0;
    std::string decoded;
    ParsedAnswer parsed;
    bool correct = false;
};

// Un-intercepted reference pass. span_source picks what the span slots
// consume: the dataset-resolved span or the model's own predictions.
ExampleRun run_baseline(const Model & model, const Vocabulary & vocab, const PreparedExample & pe,
                        const SuiteOptions & options);

struct InterventionRun {
    ReplacedSpan span;
    ExampleRun run;
};

// Re-runs the example with the span intercepted at the input-embedding level.
// The replacement is derived from the baseline's consumed span; prompt, image
// features, placement, and decode config are unchanged. Throws PrefixMismatch
// if the frozen prefix does not hash identically to the baseline's.
InterventionRun run_intervention(const Model & model, const Vocabulary & vocab,
                                 const PreparedExample & pe, const ExampleRun & baseline,
                                 const Intervention & iv, const SuiteOptions & options);

// Runs every intervention over every example and tallies one row per
// (intervention x subset) plus an average row per intervention. A reference
// pass runs only when something consumes it: self span source, a
// random_model_dist row, or count matching. Per-example data and numeric
// errors score as incorrect across the affected rows and are recorded in the
// audit log; PrefixMismatch stays fatal. Duplicate intervention kinds are
// rejected. When audit_path is nonempty, one JSON line is appended per
// (example x intervention) with span norms, the parsed answer, and any error.
TRTReport run_suite(const Model & model, const Vocabulary & vocab,
                    const std::vector<PreparedExample> & examples,
                    const std::vector<Intervention> & interventions, const SuiteOptions & options,
                    const std::string & audit_path = "");

} // namespace trtlab

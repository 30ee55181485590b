#pragma once

#include <map>
#include <string>
#include <vector>

namespace trtlab {

// ---------------------------------------------------------------------------
// Answer parsing
// ---------------------------------------------------------------------------

enum class AnswerPattern {
    kParenthesized,
    kBareLetter,
    kLongForm,
    kUnparsable,
};

const char * answer_pattern_name(AnswerPattern p);

// The recognized forms in the order they are tried; report metadata records
// this set so consumers know what the scorer accepted.
std::vector<std::string> recognized_answer_patterns();

struct ParsedAnswer {
    char letter = '?';
    AnswerPattern pattern = AnswerPattern::kUnparsable;

    bool ok() const { return pattern != AnswerPattern::kUnparsable; }
};

// Extracts the chosen option letter from decoded model output. Patterns are
// tried in order: a parenthesized letter like "(B)" (the last one wins, so a
// restated prompt cannot shadow the final answer), then a lone trailing
// letter token, then the long form "point B is closer". Case-insensitive;
// the returned letter is uppercase.
ParsedAnswer parse_answer(const std::string & text);

// ---------------------------------------------------------------------------
// Accuracy arithmetic
// ---------------------------------------------------------------------------

// Half-up rounding to two decimals: 26.075 -> 26.08.
double round_half_up_2dp(double value);

// 100 * correct / total, rounded half-up to two decimals. total must be > 0.
double accuracy_percent(long long correct, long long total);

// Central (equal-tailed) binomial interval: the smallest set {lo..hi} with
// at most alpha/2 probability excluded in each tail.
struct CountInterval {
    long long lo = 0;
    long long hi = 0;
};
CountInterval binomial_central_interval(long long n, double p, double alpha);

// ---------------------------------------------------------------------------
// Report rows
// ---------------------------------------------------------------------------

constexpr const char * kAverageSubset = "avg";

struct ReportRow {
    std::string intervention;
    std::string subset;
    long long correct = 0;
    long long total = 0;
    double accuracy = 0.0;
};

// Pools counts across the given subset rows and sets accuracy to the rounded
// mean of the (already rounded) subset accuracies.
ReportRow average_row(const std::string & intervention, const std::vector<ReportRow> & subset_rows);

// ---------------------------------------------------------------------------
// Signature classification
// ---------------------------------------------------------------------------

struct SignatureThresholds {
    double hurt = 5.0;
    double help = 5.0;
    double same = 1.0;
};

struct Verdict {
    bool content_sensitive = false;
    bool span_position_bias = false;
    bool budget_confound = false;
    bool content_unused = false;
    bool has_oracle = false;
    bool has_first_repeat = false;
    std::map<std::string, double> deltas;
    SignatureThresholds thresholds;
};

// Applies the decision rules to the "avg" rows of a report. Requires at
// least identity plus one of zero/random; oracle and first_repeat gate the
// checks that need them.
Verdict classify_signature(const std::vector<ReportRow> & rows,
                           const SignatureThresholds & thresholds = {});

// ---------------------------------------------------------------------------
// Replacement report
// ---------------------------------------------------------------------------

struct TRTReport {
    std::vector<ReportRow> rows;
    std::string checkpoint;
    std::string dataset;
    std::string span_source;
    unsigned long long suite_seed = 0;
    bool kv_cache = true;
    bool count_matched = false;
    long long examples_scored = 0;
    long long examples_failed = 0;
    std::vector<std::string> parser_patterns = recognized_answer_patterns();
    Verdict verdict;
    bool has_verdict = false;
};

constexpr int kReportSchemaVersion = 1;

void write_report_json(const TRTReport & report, const std::string & path);
TRTReport read_report_json(const std::string & path);

// One line per intervention: intervention,3pt,4pt,5pt,avg,correct,total.
void write_report_csv(const TRTReport & report, const std::string & path);

// Table plus, when a verdict is present, a one-line classification summary.
std::string render_report_text(const TRTReport & report);

} // namespace trtlab

#include "trtlab/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "trtlab/errors.hpp"

namespace trtlab {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Answer parsing
// ---------------------------------------------------------------------------

const char * answer_pattern_name(AnswerPattern p)
{
    switch (p) {
    case AnswerPattern::kParenthesized: return "parenthesized";
    case AnswerPattern::kBareLetter: return "bare_letter";
    case AnswerPattern::kLongForm: return "long_form";
    case AnswerPattern::kUnparsable: return "unparsable";
    }
    return "unparsable";
}

std::vector<std::string> recognized_answer_patterns()
{
    return {answer_pattern_name(AnswerPattern::kParenthesized),
            answer_pattern_name(AnswerPattern::kBareLetter),
            answer_pattern_name(AnswerPattern::kLongForm)};
}

namespace {

char upper_letter(char c)
{
    return static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
}

bool is_option_letter(char c)
{
    char u = upper_letter(c);
    return u >= 'A' && u <= 'E';
}

bool last_regex_capture(const std::string & text, const std::regex & re, char * out)
{
    auto begin = std::sregex_iterator(text.begin(), text.end(), re);
    auto end = std::sregex_iterator();
    bool found = false;
    for (auto it = begin; it != end; ++it) {
        *out = upper_letter((*it)[1].str()[0]);
        found = true;
    }
    return found;
}

} // namespace

ParsedAnswer parse_answer(const std::string & text)
{
    static const std::regex paren_re(R"(\(\s*([A-Ea-e])\s*\))");
    static const std::regex long_re(
        R"(point\s+([A-Ea-e])\s+(?:is|was)\s+(?:the\s+)?(?:closer|closest|nearest))",
        std::regex::icase);

    ParsedAnswer parsed;
    char letter = '?';
    if (last_regex_capture(text, paren_re, &letter)) {
        parsed.letter = letter;
        parsed.pattern = AnswerPattern::kParenthesized;
        return parsed;
    }

    std::istringstream tokens(text);
    std::string tok;
    std::string last;
    while (tokens >> tok) last = tok;
    size_t b = 0;
    size_t e = last.size();
    auto is_trim = [](char c) {
        return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':' ||
               c == '"' || c == '\'';
    };
    while (b < e && is_trim(last[b])) ++b;
    while (e > b && is_trim(last[e - 1])) --e;
    if (e - b == 1 && is_option_letter(last[b])) {
        parsed.letter = upper_letter(last[b]);
        parsed.pattern = AnswerPattern::kBareLetter;
        return parsed;
    }

    if (last_regex_capture(text, long_re, &letter)) {
        parsed.letter = letter;
        parsed.pattern = AnswerPattern::kLongForm;
        return parsed;
    }
    return parsed;
}

// ---------------------------------------------------------------------------
// Accuracy arithmetic
// ---------------------------------------------------------------------------

double round_half_up_2dp(double value)
{
    return std::floor(value * 100.0 + 0.5) / 100.0;
}

double accuracy_percent(long long correct, long long total)
{
    if (total <= 0) throw InsufficientData("accuracy over an empty set");
    if (correct < 0 || correct > total) throw DataError("correct count outside [0, total]");
    return round_half_up_2dp(100.0 * static_cast<double>(correct) / static_cast<double>(total));
}

CountInterval binomial_central_interval(long long n, double p, double alpha)
{
    if (n < 0) throw InvalidConfig("binomial n must be >= 0");
    if (p < 0.0 || p > 1.0) throw InvalidConfig("binomial p must lie in [0, 1]");
    if (alpha <= 0.0 || alpha >= 1.0) throw InvalidConfig("binomial alpha must lie in (0, 1)");
    if (p == 0.0) return {0, 0};
    if (p == 1.0) return {n, n};

    const double tail = alpha / 2.0;
    const double slack = 1e-12;
    const double log_n_fact = std::lgamma(static_cast<double>(n) + 1.0);
    auto pmf = [&](long long k) {
        double lk = static_cast<double>(k);
        double lp = log_n_fact - std::lgamma(lk + 1.0) -
                    std::lgamma(static_cast<double>(n - k) + 1.0) + lk * std::log(p) +
                    static_cast<double>(n - k) * std::log1p(-p);
        return std::exp(lp);
    };

    CountInterval out{0, n};
    double below = 0.0;
    for (long long k = 0; k <= n; ++k) {
        if (below <= tail + slack) out.lo = k;
        else break;
        below += pmf(k);
    }
    double cdf = 0.0;
    for (long long k = 0; k <= n; ++k) {
        cdf += pmf(k);
        if (1.0 - cdf <= tail + slack) {
            out.hi = k;
            break;
        }
    }
    if (out.hi < out.lo) out.hi = out.lo;
    return out;
}

// ---------------------------------------------------------------------------
// Report rows
// ---------------------------------------------------------------------------

ReportRow average_row(const std::string & intervention, const std::vector<ReportRow> & subset_rows)
{
    if (subset_rows.empty()) throw InsufficientData("average over zero subset rows");
    ReportRow avg;
    avg.intervention = intervention;
    avg.subset = kAverageSubset;
    double acc_sum = 0.0;
    for (const ReportRow & row : subset_rows) {
        avg.correct += row.correct;
        avg.total += row.total;
        acc_sum += row.accuracy;
    }
    avg.accuracy = round_half_up_2dp(acc_sum / static_cast<double>(subset_rows.size()));
    return avg;
}

// ---------------------------------------------------------------------------
// Signature classification
// ---------------------------------------------------------------------------

Verdict classify_signature(const std::vector<ReportRow> & rows, const SignatureThresholds & thresholds)
{
    std::map<std::string, double> avg;
    for (const ReportRow & row : rows) {
        if (row.subset != kAverageSubset) continue;
        if (!avg.emplace(row.intervention, row.accuracy).second)
            throw DataError("duplicate avg row for intervention " + row.intervention);
    }
    auto get = [&](const std::string & name) {
        auto it = avg.find(name);
        if (it == avg.end()) throw MissingRow("no avg row for intervention " + name);
        return it->second;
    };
    auto has = [&](const std::string & name) { return avg.count(name) != 0; };

    Verdict v;
    v.thresholds = thresholds;
    const double identity = get("identity");
    v.has_oracle = has("oracle");
    v.has_first_repeat = has("first_repeat");

    const bool has_random = has("random");
    const bool has_zero = has("zero");
    if (!has_random && !has_zero) throw MissingRow("no avg row for intervention random or zero");
    const std::string control = has_random ? "random" : "zero";
    const double control_acc = get(control);

    v.deltas["identity_minus_" + control] = identity - control_acc;
    bool hurts = identity - control_acc >= thresholds.hurt;
    bool helps = true;
    if (v.has_oracle) {
        const double oracle = get("oracle");
        v.deltas["oracle_minus_identity"] = oracle - identity;
        helps = oracle - identity >= thresholds.help;
        v.content_unused = oracle - identity < thresholds.help;
    }
    v.content_sensitive = hurts && helps;

    double best_control = control_acc;
    if (has_random && has_zero) best_control = std::max(get("random"), get("zero"));
    v.deltas["identity_minus_best_control"] = identity - best_control;
    v.span_position_bias = identity - best_control < thresholds.hurt;

    if (v.has_first_repeat) {
        const double fr = get("first_repeat");
        v.deltas["identity_minus_first_repeat"] = identity - fr;
        v.budget_confound = identity - fr < thresholds.same;
    }
    return v;
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

namespace {

json verdict_to_json(const Verdict & v)
{
    json j;
    j["content_sensitive"] = v.content_sensitive;
    j["span_position_bias"] = v.span_position_bias;
    j["budget_confound"] = v.budget_confound;
    j["content_unused"] = v.content_unused;
    j["has_oracle"] = v.has_oracle;
    j["has_first_repeat"] = v.has_first_repeat;
    j["deltas"] = v.deltas;
    j["thresholds"] = {{"hurt", v.thresholds.hurt},
                       {"help", v.thresholds.help},
                       {"same", v.thresholds.same}};
    return j;
}

Verdict verdict_from_json(const json & j)
{
    Verdict v;
    v.content_sensitive = j.at("content_sensitive").get<bool>();
    v.span_position_bias = j.at("span_position_bias").get<bool>();
    v.budget_confound = j.at("budget_confound").get<bool>();
    v.content_unused = j.at("content_unused").get<bool>();
    v.has_oracle = j.at("has_oracle").get<bool>();
    v.has_first_repeat = j.at("has_first_repeat").get<bool>();
    v.deltas = j.at("deltas").get<std::map<std::string, double>>();
    const json & t = j.at("thresholds");
    v.thresholds.hurt = t.at("hurt").get<double>();
    v.thresholds.help = t.at("help").get<double>();
    v.thresholds.same = t.at("same").get<double>();
    return v;
}

std::string format_2dp(double value)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", value);
    return buf;
}

std::vector<std::string> intervention_order(const std::vector<ReportRow> & rows)
{
    std::vector<std::string> order;
    for (const ReportRow & row : rows)
        if (std::find(order.begin(), order.end(), row.intervention) == order.end())
            order.push_back(row.intervention);
    return order;
}

const ReportRow * find_row_ptr(const std::vector<ReportRow> & rows,
                               const std::string & intervention, const std::string & subset)
{
    for (const ReportRow & row : rows)
        if (row.intervention == intervention && row.subset == subset) return &row;
    return nullptr;
}

const ReportRow & find_row(const std::vector<ReportRow> & rows, const std::string & intervention,
                           const std::string & subset)
{
    const ReportRow * row = find_row_ptr(rows, intervention, subset);
    if (!row) throw MissingRow("no row for intervention " + intervention + ", subset " + subset);
    return *row;
}

} // namespace

void write_report_json(const TRTReport & report, const std::string & path)
{
    json rows = json::array();
    for (const ReportRow & row : report.rows) {
        rows.push_back({{"intervention", row.intervention},
                        {"subset", row.subset},
                        {"correct", row.correct},
                        {"total", row.total},
                        {"accuracy", row.accuracy}});
    }
    json j;
    j["schema_version"] = kReportSchemaVersion;
    j["rows"] = rows;
    j["checkpoint"] = report.checkpoint;
    j["dataset"] = report.dataset;
    j["span_source"] = report.span_source;
    j["suite_seed"] = report.suite_seed;
    j["kv_cache"] = report.kv_cache;
    j["count_matched"] = report.count_matched;
    j["examples_scored"] = report.examples_scored;
    j["examples_failed"] = report.examples_failed;
    j["parser_patterns"] = report.parser_patterns;
    if (report.has_verdict) j["verdict"] = verdict_to_json(report.verdict);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write report " + path);
    out << j.dump(2) << "\n";
    if (!out) throw DataError("failed writing report " + path);
}

TRTReport read_report_json(const std::string & path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open report " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception & e) {
        throw ParseError(path + ": " + e.what(), 0);
    }
    try {
        if (j.at("schema_version").get<int>() != kReportSchemaVersion)
            throw SchemaMismatch("unsupported report schema_version in " + path);
        TRTReport report;
        for (const json & r : j.at("rows")) {
            ReportRow row;
            row.intervention = r.at("intervention").get<std::string>();
            row.subset = r.at("subset").get<std::string>();
            row.correct = r.at("correct").get<long long>();
            row.total = r.at("total").get<long long>();
            row.accuracy = r.at("accuracy").get<double>();
            report.rows.push_back(std::move(row));
        }
        report.checkpoint = j.at("checkpoint").get<std::string>();
        report.dataset = j.at("dataset").get<std::string>();
        report.span_source = j.at("span_source").get<std::string>();
        report.suite_seed = j.at("suite_seed").get<unsigned long long>();
        report.kv_cache = j.at("kv_cache").get<bool>();
        report.count_matched = j.at("count_matched").get<bool>();
        report.examples_scored = j.at("examples_scored").get<long long>();
        report.examples_failed = j.at("examples_failed").get<long long>();
        report.parser_patterns = j.at("parser_patterns").get<std::vector<std::string>>();
        if (j.contains("verdict")) {
            report.verdict = verdict_from_json(j.at("verdict"));
            report.has_verdict = true;
        }
        return report;
    } catch (const json::exception & e) {
        throw SchemaMismatch(path + ": " + e.what());
    }
}

void write_report_csv(const TRTReport & report, const std::string & path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write report " + path);
    out << "intervention,3pt,4pt,5pt,avg,correct,total\n";
    for (const std::string & name : intervention_order(report.rows)) {
        const ReportRow & avg = find_row(report.rows, name, kAverageSubset);
        out << name;
        for (const char * subset : {"3pt", "4pt", "5pt"}) {
            const ReportRow * row = find_row_ptr(report.rows, name, subset);
            out << ",";
            if (row) out << format_2dp(row->accuracy);
        }
        out << "," << format_2dp(avg.accuracy) << "," << avg.correct << "," << avg.total << "\n";
    }
    if (!out) throw DataError("failed writing report " + path);
}

std::string render_report_text(const TRTReport & report)
{
    std::vector<std::string> subsets;
    for (const ReportRow & row : report.rows)
        if (row.subset != kAverageSubset &&
            std::find(subsets.begin(), subsets.end(), row.subset) == subsets.end())
            subsets.push_back(row.subset);
    subsets.push_back(kAverageSubset);

    size_t name_w = std::string("intervention").size();
    for (const ReportRow & row : report.rows) name_w = std::max(name_w, row.intervention.size());

    std::ostringstream out;
    out << std::left << std::setw(static_cast<int>(name_w)) << "intervention";
    for (const std::string & subset : subsets)
        out << std::right << std::setw(9) << subset;
    out << "\n";
    for (const std::string & name : intervention_order(report.rows)) {
        out << std::left << std::setw(static_cast<int>(name_w)) << name;
        for (const std::string & subset : subsets)
            out << std::right << std::setw(9) << format_2dp(find_row(report.rows, name, subset).accuracy);
        out << "\n";
    }
    if (report.has_verdict) {
        const Verdict & v = report.verdict;
        out << "verdict: " << (v.content_sensitive ? "content-sensitive" : "not content-sensitive");
        std::vector<std::string> flags;
        if (v.span_position_bias) flags.push_back("span-position-bias");
        if (v.budget_confound) flags.push_back("budget-confound");
        if (v.content_unused) flags.push_back("content-unused");
        if (!flags.empty()) {
            out << " [";
            for (size_t i = 0; i < flags.size(); ++i) out << (i ? ", " : "") << flags[i];
            out << "]";
        }
        out << "\n";
    }
    return out.str();
}

} // namespace trtlab

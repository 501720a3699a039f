#pragma once

// Keyword accuracy, Mean Rank, per-question-type breakdowns, and the
// side-by-side method comparison table.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "keyex/errors.hpp"

namespace keyex {

enum class TiePolicy { optimistic, pessimistic };

inline TiePolicy parse_tie_policy(const std::string& name) {
    if (name == "optimistic" || name.empty()) return TiePolicy::optimistic;
    if (name == "pessimistic") return TiePolicy::pessimistic;
    throw ConfigError("unknown tie policy: " + name);
}

// One scored example from any extraction method. Empty gold_tokens marks the
// example unevaluable; it is skipped and counted.
struct ExtractionRow {
    std::string example_id;
    std::string question_type;
    std::vector<std::string> answer_tokens;
    std::vector<double> scores;  // aligned with answer_tokens
    std::string predicted;
    std::vector<std::string> gold_tokens;
};

// Rank of the best gold token when answer tokens are ordered by score.
// Optimistic ties place the gold token first in its tie group; pessimistic
// ties place it last. nullopt when no gold token occurs in the answer.
inline std::optional<int> keyword_rank(std::span<const double> scores,
                                       std::span<const std::string> tokens,
                                       std::span<const std::string> gold_tokens,
                                       TiePolicy policy = TiePolicy::optimistic) {
    if (scores.size() != tokens.size()) {
        throw ValidationError("keyword_rank: scores and tokens differ in length");
    }
    std::optional<int> best;
    for (size_t p = 0; p < tokens.size(); ++p) {
        bool is_gold = false;
        for (const auto& g : gold_tokens) is_gold = is_gold || tokens[p] == g;
        if (!is_gold) continue;
        int greater = 0;
        int tied_others = 0;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (scores[j] > scores[p]) ++greater;
            else if (j != p && scores[j] == scores[p]) ++tied_others;
        }
        const int rank =
            policy == TiePolicy::optimistic ? greater + 1 : greater + tied_others + 1;
        if (!best || rank < *best) best = rank;
    }
    return best;
}

struct AccuracyCount {
    int64_t correct = 0;
    int64_t evaluated = 0;
    int64_t skipped = 0;

    std::optional<double> value() const {
        if (evaluated == 0) return std::nullopt;
        return static_cast<double>(correct) / static_cast<double>(evaluated);
    }
};

// Exact token match against any gold token; empty golds are skipped.
inline AccuracyCount keyword_accuracy(std::span<const std::string> predictions,
                                      std::span<const std::vector<std::string>> golds) {
    if (predictions.size() != golds.size()) {
        throw ValidationError("keyword_accuracy: prediction/gold length mismatch");
    }
    AccuracyCount count;
    for (size_t i = 0; i < predictions.size(); ++i) {
        if (golds[i].empty()) {
            ++count.skipped;
            continue;
        }
        ++count.evaluated;
        for (const auto& g : golds[i]) {
            if (predictions[i] == g) {
                ++count.correct;
                break;
            }
        }
    }
    return count;
}

struct TypeStats {
    std::string question_type;
    int64_t count = 0;       // all rows of this type
    int64_t evaluated = 0;
    std::optional<double> accuracy;
    std::optional<double> mean_rank;
};

struct MethodEval {
    std::string method;
    std::optional<double> accuracy;
    std::optional<double> mean_rank;
    std::optional<double> accuracy_std;   // present for multi-seed rows
    std::optional<double> mean_rank_std;
    int n_seeds = 1;
    int64_t n_evaluated = 0;
    int64_t n_skipped = 0;
    std::vector<TypeStats> per_type;  // top-10 types by frequency plus "other"
};

inline MethodEval evaluate_extractions(const std::string& method,
                                       std::span<const ExtractionRow> rows,
                                       TiePolicy policy = TiePolicy::optimistic) {
    MethodEval out;
    out.method = method;

    struct Agg {
        int64_t count = 0;
        int64_t evaluated = 0;
        int64_t correct = 0;
        int64_t ranked = 0;
        double rank_sum = 0.0;
    };
    Agg total;
    std::map<std::string, Agg> by_type;

    for (const auto& row : rows) {
        Agg& type_agg = by_type[row.question_type];
        ++type_agg.count;
        ++total.count;
        if (row.gold_tokens.empty()) continue;
        bool gold_present = false;
        for (const auto& g : row.gold_tokens) {
            for (const auto& t : row.answer_tokens) gold_present = gold_present || t == g;
        }
        if (!gold_present) continue;  // skipped; reported via n_skipped below
        ++total.evaluated;
        ++type_agg.evaluated;
        bool correct = false;
        for (const auto& g : row.gold_tokens) correct = correct || row.predicted == g;
        if (correct) {
            ++total.correct;
            ++type_agg.correct;
        }
        const auto rank = keyword_rank(row.scores, row.answer_tokens, row.gold_tokens, policy);
        if (rank) {
            ++total.ranked;
            total.rank_sum += *rank;
            ++type_agg.ranked;
            type_agg.rank_sum += *rank;
        }
    }

    out.n_evaluated = total.evaluated;
    out.n_skipped = total.count - total.evaluated;
    if (total.evaluated > 0) {
        out.accuracy = static_cast<double>(total.correct) / static_cast<double>(total.evaluated);
    }
    if (total.ranked > 0) out.mean_rank = total.rank_sum / static_cast<double>(total.ranked);

    // top-10 question types by frequency (ties by name), remainder folded
    // into "other"
    std::vector<std::pair<std::string, Agg>> types(by_type.begin(), by_type.end());
    std::sort(types.begin(), types.end(), [](const auto& a, const auto& b) {
        if (a.second.count != b.second.count) return a.second.count > b.second.count;
        return a.first < b.first;
    });
    Agg other;
    bool has_other = false;
    for (size_t i = 0; i < types.size(); ++i) {
        if (i < 10) {
            const Agg& a = types[i].second;
            TypeStats row;
            row.question_type = types[i].first;
            row.count = a.count;
            row.evaluated = a.evaluated;
            if (a.evaluated > 0)
                row.accuracy = static_cast<double>(a.correct) / static_cast<double>(a.evaluated);
            if (a.ranked > 0) row.mean_rank = a.rank_sum / static_cast<double>(a.ranked);
            out.per_type.push_back(std::move(row));
        } else {
            has_other = true;
            other.count += types[i].second.count;
            other.evaluated += types[i].second.evaluated;
            other.correct += types[i].second.correct;
            other.ranked += types[i].second.ranked;
            other.rank_sum += types[i].second.rank_sum;
        }
    }
    if (has_other) {
        TypeStats row;
        row.question_type = "other";
        row.count = other.count;
        row.evaluated = other.evaluated;
        if (other.evaluated > 0)
            row.accuracy = static_cast<double>(other.correct) / static_cast<double>(other.evaluated);
        if (other.ranked > 0) row.mean_rank = other.rank_sum / static_cast<double>(other.ranked);
        out.per_type.push_back(std::move(row));
    }
    return out;
}

// Mean and population standard deviation of accuracy/mean-rank over seeds.
// Per-type tables are dropped from merged rows.
inline MethodEval merge_seed_evals(const std::string& method,
                                   std::span<const MethodEval> seeds) {
    if (seeds.empty()) throw ValidationError("merge_seed_evals: no rows");
    if (seeds.size() == 1) {
        MethodEval out = seeds[0];
        out.method = method;
        return out;
    }
    MethodEval out;
    out.method = method;
    out.n_seeds = static_cast<int>(seeds.size());
    out.n_evaluated = seeds[0].n_evaluated;
    out.n_skipped = seeds[0].n_skipped;
    auto stats = [](std::span<const MethodEval> rows, auto getter)
        -> std::pair<std::optional<double>, std::optional<double>> {
        std::vector<double> vals;
        for (const auto& r : rows) {
            const auto v = getter(r);
            if (v) vals.push_back(*v);
        }
        if (vals.empty()) return {std::nullopt, std::nullopt};
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= static_cast<double>(vals.size());
        double var = 0.0;
        for (double v : vals) var += (v - mean) * (v - mean);
        var /= static_cast<double>(vals.size());
        return {mean, std::sqrt(var)};
    };
    std::tie(out.accuracy, out.accuracy_std) =
        stats(seeds, [](const MethodEval& r) { return r.accuracy; });
    std::tie(out.mean_rank, out.mean_rank_std) =
        stats(seeds, [](const MethodEval& r) { return r.mean_rank; });
    return out;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_metric(std::optional<double> value, std::optional<double> stddev) {
    if (!value) return "--";
    char buf[64];
    if (stddev) {
        std::snprintf(buf, sizeof(buf), "%.3f \xc2\xb1 %.3f", *value, *stddev);
    } else {
        std::snprintf(buf, sizeof(buf), "%.3f", *value);
    }
    return buf;
}

}  // namespace detail

inline std::string render_comparison_table(std::span<const MethodEval> rows) {
    size_t name_width = 5;
    for (const auto& r : rows) name_width = std::max(name_width, r.method.size());
    std::string out;
    char line[256];
    std::snprintf(line, sizeof(line), "%-*s  %-16s  %-16s\n", static_cast<int>(name_width),
                  "model", "accuracy (+)", "mean rank (-)");
    out += line;
    out += std::string(name_width + 38, '-') + "\n";
    for (const auto& r : rows) {
        const std::string acc = detail::format_metric(r.accuracy, r.accuracy_std);
        const std::string rank = detail::format_metric(r.mean_rank, r.mean_rank_std);
        std::snprintf(line, sizeof(line), "%-*s  %-16s  %-16s\n", static_cast<int>(name_width),
                      r.method.c_str(), acc.c_str(), rank.c_str());
        out += line;
    }
    return out;
}

inline std::string render_per_type_table(const MethodEval& row) {
    std::string out = row.method + " by question type\n";
    char line[256];
    std::snprintf(line, sizeof(line), "%-18s  %8s  %10s  %10s\n", "type", "count", "accuracy",
                  "mean rank");
    out += line;
    out += std::string(52, '-') + "\n";
    for (const auto& t : row.per_type) {
        const std::string acc = detail::format_metric(t.accuracy, std::nullopt);
        const std::string rank = detail::format_metric(t.mean_rank, std::nullopt);
        std::snprintf(line, sizeof(line), "%-18s  %8lld  %10s  %10s\n", t.question_type.c_str(),
                      static_cast<long long>(t.count), acc.c_str(), rank.c_str());
        out += line;
    }
    return out;
}

// One JSON object per method row.
inline std::string to_report_jsonl(std::span<const MethodEval> rows,
                                   const std::string& dataset_name) {
    std::string out;
    for (const auto& r : rows) {
        nlohmann::json j;
        j["dataset"] = dataset_name;
        j["method"] = r.method;
        j["n_seeds"] = r.n_seeds;
        j["n_evaluated"] = r.n_evaluated;
        j["n_skipped"] = r.n_skipped;
        if (r.accuracy) j["accuracy"] = *r.accuracy;
        if (r.accuracy_std) j["accuracy_std"] = *r.accuracy_std;
        if (r.mean_rank) j["mean_rank"] = *r.mean_rank;
        if (r.mean_rank_std) j["mean_rank_std"] = *r.mean_rank_std;
        if (!r.per_type.empty()) {
            nlohmann::json types = nlohmann::json::array();
            for (const auto& t : r.per_type) {
                nlohmann::json tj;
                tj["type"] = t.question_type;
                tj["count"] = t.count;
                if (t.accuracy) tj["accuracy"] = *t.accuracy;
                if (t.mean_rank) tj["mean_rank"] = *t.mean_rank;
                types.push_back(tj);
            }
            j["per_type"] = types;
        }
        out += j.dump();
        out += '\n';
    }
    return out;
}

}  // namespace keyex

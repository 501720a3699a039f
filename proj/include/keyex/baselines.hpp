#pragma once

// Deterministic unsupervised extraction baselines: TF-IDF over the training
// answers and an embedding-similarity ranker (cosine of each word against the
// mean-of-words sentence embedding).

#include <cmath>
#include <fstream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "keyex/text.hpp"

namespace keyex {

struct IdfTable {
    std::unordered_map<std::string, double> idf;
    int64_t n_docs = 0;

    // Smoothed idf; unseen tokens take df = 0.
    double idf_of(std::string_view token) const {
        auto it = idf.find(std::string(token));
        if (it != idf.end()) return it->second;
        return std::log((1.0 + static_cast<double>(n_docs)) / 1.0) + 1.0;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("idf table: cannot open for writing: " + path);
        out << "# n_docs\t" << n_docs << '\n';
        std::vector<std::pair<std::string, double>> sorted(idf.begin(), idf.end());
        std::sort(sorted.begin(), sorted.end());
        out.precision(17);
        for (const auto& [token, value] : sorted) out << token << '\t' << value << '\n';
    }

    static IdfTable load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("idf table: cannot open: " + path);
        IdfTable table;
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) {
                throw ParseError("idf table: line " + std::to_string(line_no) +
                                 ": expected token<TAB>idf");
            }
            const std::string token = line.substr(0, tab);
            if (token == "# n_docs") {
                table.n_docs = std::stoll(line.substr(tab + 1));
                continue;
            }
            table.idf.emplace(token, std::stod(line.substr(tab + 1)));
        }
        return table;
    }
};

// idf(t) = ln((1 + N) / (1 + df(t))) + 1 over the given documents.
inline IdfTable build_idf(const std::vector<std::vector<std::string>>& docs) {
    if (docs.empty()) throw ValidationError("build_idf: empty corpus");
    IdfTable table;
    table.n_docs = static_cast<int64_t>(docs.size());
    std::unordered_map<std::string, int64_t> df;
    for (const auto& doc : docs) {
        std::unordered_map<std::string, bool> seen;
        for (const auto& tok : doc) {
            if (!seen.emplace(tok, true).second) continue;
            ++df[tok];
        }
    }
    for (const auto& [token, count] : df) {
        table.idf.emplace(token, std::log((1.0 + static_cast<double>(table.n_docs)) /
                                          (1.0 + static_cast<double>(count))) +
                                     1.0);
    }
    return table;
}

struct BaselineExtraction {
    std::string token;
    int index = 0;
    std::vector<double> scores;  // per answer position
};

// score(t) = tf(t, answer) · idf(t); ties break to the first occurrence.
inline BaselineExtraction tfidf_extract(std::span<const std::string> answer_tokens,
                                       const IdfTable& idf) {
    if (answer_tokens.empty()) throw ValidationError("tfidf_extract: empty answer");
    std::unordered_map<std::string, int> tf;
    for (const auto& tok : answer_tokens) ++tf[tok];
    BaselineExtraction out;
    out.scores.reserve(answer_tokens.size());
    for (const auto& tok : answer_tokens) {
        out.scores.push_back(static_cast<double>(tf[tok]) * idf.idf_of(tok));
    }
    out.index = 0;
    for (size_t i = 1; i < out.scores.size(); ++i) {
        if (out.scores[i] > out.scores[static_cast<size_t>(out.index)]) {
            out.index = static_cast<int>(i);
        }
    }
    out.token = answer_tokens[static_cast<size_t>(out.index)];
    return out;
}

// score(t) = cosine(embedding(t), mean of in-vocab token embeddings);
// out-of-vocab tokens score -1. All-OOV answers cannot be ranked.
inline BaselineExtraction embedrank_extract(std::span<const std::string> answer_tokens,
                                           const EmbeddingTable& table,
                                           const Vocabulary& vocab) {
    if (answer_tokens.empty()) throw ValidationError("embedrank_extract: empty answer");
    const int dim = table.dim;
    std::vector<double> sentence(static_cast<size_t>(dim), 0.0);
    int in_vocab = 0;
    for (const auto& tok : answer_tokens) {
        if (!vocab.contains(tok)) continue;
        const int id = vocab.id_of(tok);
        for (int j = 0; j < dim; ++j) sentence[static_cast<size_t>(j)] += table.matrix.at2(id, j);
        ++in_vocab;
    }
    if (in_vocab == 0) {
        throw ValidationError("embedrank_extract: every answer token is out of vocabulary");
    }
    for (auto& v : sentence) v /= static_cast<double>(in_vocab);
    double sentence_norm = 0.0;
    for (double v : sentence) sentence_norm += v * v;
    sentence_norm = std::sqrt(sentence_norm);
    if (!(sentence_norm > 0.0)) {
        throw NumericError("embedrank_extract: zero sentence embedding");
    }

    BaselineExtraction out;
    out.scores.reserve(answer_tokens.size());
    for (const auto& tok : answer_tokens) {
        if (!vocab.contains(tok)) {
            out.scores.push_back(-1.0);
            continue;
        }
        const int id = vocab.id_of(tok);
        double dot = 0.0, norm = 0.0;
        for (int j = 0; j < dim; ++j) {
            const double e = table.matrix.at2(id, j);
            dot += e * sentence[static_cast<size_t>(j)];
            norm += e * e;
        }
        norm = std::sqrt(norm);
        out.scores.push_back(norm > 0.0 ? dot / (norm * sentence_norm) : -1.0);
    }
    out.index = 0;
    for (size_t i = 1; i < out.scores.size(); ++i) {
        if (out.scores[i] > out.scores[static_cast<size_t>(out.index)]) {
            out.index = static_cast<int>(i);
        }
    }
    out.token = answer_tokens[static_cast<size_t>(out.index)];
    return out;
}

}  // namespace keyex

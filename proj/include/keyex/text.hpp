#pragma once

// Tokenization, vocabularies with fixed special ids, bag-of-words features,
// and word-embedding tables (pretrained text format or seeded random init).

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "keyex/rng.hpp"
#include "keyex/tensor.hpp"

namespace keyex {

// Lowercases, strips . , ? ! and splits on whitespace. Empty output only for
// input with no word characters.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : text) {
        if (ch == '.' || ch == ',' || ch == '?' || ch == '!') continue;
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!current.empty()) {
                tokens.push_back(current);
                current.clear();
            }
            continue;
        }
        current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
    if (!current.empty()) tokens.push_back(current);
    return tokens;
}

inline std::string join_tokens(std::span<const std::string> tokens) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

class Vocabulary {
  public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;
    static constexpr int kMask = 4;
    static constexpr int kNumSpecials = 5;

    static const std::array<std::string, kNumSpecials>& special_tokens() {
        static const std::array<std::string, kNumSpecials> specials = {
            "<pad>", "<unk>", "<bos>", "<eos>", "<mask>"};
        return specials;
    }

    Vocabulary() {
        for (const auto& s : special_tokens()) push(s);
    }

    // Tokens with frequency >= min_count, ids ordered by (frequency desc,
    // token asc). Everything else maps to <unk>.
    static Vocabulary build(const std::vector<std::vector<std::string>>& corpus,
                            int min_count = 1) {
        if (corpus.empty()) throw ValidationError("build_vocab: empty corpus");
        std::map<std::string, int64_t> counts;
        for (const auto& doc : corpus) {
            for (const auto& tok : doc) {
                if (is_special_literal(tok)) continue;
                ++counts[tok];
            }
        }
        std::vector<std::pair<std::string, int64_t>> kept;
        for (const auto& [tok, count] : counts) {
            if (count >= min_count) kept.emplace_back(tok, count);
        }
        std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        Vocabulary v;
        for (const auto& [tok, count] : kept) v.push(tok);
        return v;
    }

    int size() const { return static_cast<int>(to_token_.size()); }

    int id_of(std::string_view token) const {
        auto it = to_id_.find(std::string(token));
        return it == to_id_.end() ? kUnk : it->second;
    }

    bool contains(std::string_view token) const {
        return to_id_.find(std::string(token)) != to_id_.end();
    }

    const std::string& token_of(int id) const {
        if (id < 0 || id >= size()) throw ValidationError("vocabulary: id out of range");
        return to_token_[static_cast<size_t>(id)];
    }

    std::vector<int> encode(std::span<const std::string> tokens) const {
        std::vector<int> ids;
        ids.reserve(tokens.size());
        for (const auto& t : tokens) ids.push_back(id_of(t));
        return ids;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("vocabulary: cannot open for writing: " + path);
        for (const auto& tok : to_token_) out << tok << '\n';
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("vocabulary: cannot open: " + path);
        Vocabulary v;
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line_no <= kNumSpecials) {
                if (line != special_tokens()[static_cast<size_t>(line_no - 1)]) {
                    throw ParseError("vocabulary: line " + std::to_string(line_no) +
                                     ": expected special token");
                }
                continue;
            }
            if (line.empty()) continue;
            v.push(line);
        }
        return v;
    }

  private:
    static bool is_special_literal(const std::string& tok) {
        for (const auto& s : special_tokens()) {
            if (tok == s) return true;
        }
        return false;
    }

    void push(const std::string& token) {
        to_id_.emplace(token, static_cast<int>(to_token_.size()));
        to_token_.push_back(token);
    }

    std::unordered_map<std::string, int> to_id_;
    std::vector<std::string> to_token_;
};

// Token counts over vocabulary ids divided by sentence length; out-of-vocab
// tokens count toward <unk>, so the entries always sum to 1.
inline Tensor bow_feature(std::span<const std::string> tokens, const Vocabulary& vocab) {
    if (tokens.empty()) throw ValidationError("bow_feature: empty token list");
    Tensor bow = Tensor::zeros({vocab.size()});
    const double unit = 1.0 / static_cast<double>(tokens.size());
    for (const auto& tok : tokens) bow.at(vocab.id_of(tok)) += unit;
    return bow;
}

struct EmbeddingTable {
    Tensor matrix;  // [vocab_size × dim]
    int dim = 0;
    double coverage = 0.0;  // fraction of non-special vocab tokens found in the file
};

inline EmbeddingTable random_embedding_table(const Vocabulary& vocab, int dim, Rng& rng,
                                             bool trainable) {
    EmbeddingTable table;
    table.dim = dim;
    table.matrix = Tensor::zeros({vocab.size(), dim}, trainable);
    for (auto& v : table.matrix.values()) v = rng.uniform(-0.1, 0.1);
    return table;
}

// Plain-text "token v1 ... v_dim" per line. Vocab tokens missing from the
// file (and all specials) are initialized uniform(-0.1, 0.1) from rng.
inline EmbeddingTable load_embeddings(const std::string& path, const Vocabulary& vocab, int dim,
                                      Rng& rng, bool trainable) {
    std::ifstream in(path);
    if (!in) throw IoError("load_embeddings: cannot open: " + path);

    std::unordered_map<std::string, std::vector<double>> file_rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string token;
        if (!(ss >> token)) {
            throw ParseError("load_embeddings: line " + std::to_string(line_no) +
                             ": missing token");
        }
        std::vector<double> row;
        row.reserve(static_cast<size_t>(dim));
        double v = 0.0;
        while (ss >> v) row.push_back(v);
        if (!ss.eof()) {
            throw ParseError("load_embeddings: line " + std::to_string(line_no) +
                             ": malformed float");
        }
        if (static_cast<int>(row.size()) != dim) {
            throw ParseError("load_embeddings: line " + std::to_string(line_no) + ": expected " +
                             std::to_string(dim) + " floats, got " + std::to_string(row.size()));
        }
        file_rows.emplace(std::move(token), std::move(row));
    }

    EmbeddingTable table;
    table.dim = dim;
    table.matrix = Tensor::zeros({vocab.size(), dim}, trainable);
    int found = 0;
    int real_tokens = 0;
    for (int id = 0; id < vocab.size(); ++id) {
        const bool special = id < Vocabulary::kNumSpecials;
        if (!special) ++real_tokens;
        auto it = special ? file_rows.end() : file_rows.find(vocab.token_of(id));
        if (it != file_rows.end()) {
            ++found;
            for (int j = 0; j < dim; ++j) table.matrix.at2(id, j) = it->second[static_cast<size_t>(j)];
        } else {
            for (int j = 0; j < dim; ++j) table.matrix.at2(id, j) = rng.uniform(-0.1, 0.1);
        }
    }
    table.coverage = real_tokens > 0 ? static_cast<double>(found) / real_tokens : 0.0;
    return table;
}

inline EmbeddingTable load_embeddings(const std::string& path, const Vocabulary& vocab, int dim,
                                      uint64_t seed = 0x6b657865, bool trainable = false) {
    Rng rng(seed);
    return load_embeddings(path, vocab, dim, rng, trainable);
}

}  // namespace keyex

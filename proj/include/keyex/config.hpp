#pragma once

// Flat key-value run configuration: "section.key = value" lines with '#'
// comments. Unknown keys are rejected; any key can be overridden by a
// same-named command-line flag (the flag wins).

#include <fstream>
#include <map>
#include <set>
#include <string>
#include <string_view>

#include "keyex/errors.hpp"

namespace keyex {

inline const std::set<std::string>& known_config_keys() {
    static const std::set<std::string> keys{
        "seed",
        "out",
        "data.train",
        "data.val",
        "data.features",
        "data.feature_index",
        "data.embeddings",
        "data.min_count",
        "model.d_img",
        "model.d_e",
        "model.attn_hidden",
        "model.lstm_hidden",
        "model.decoder_input_dim",
        "model.max_len",
        "model.lambda_all",
        "model.lambda_a",
        "model.lambda_q",
        "model.word_dropout",
        "model.ablation",
        "train.epochs",
        "train.batch_size",
        "train.learning_rate",
        "train.checkpoint_interval",
        "train.tau0",
        "train.tau_rate",
        "train.tau_min",
        "synthetic.n_train",
        "synthetic.n_val",
        "synthetic.n_classes",
        "synthetic.n_templates",
        "synthetic.noise_std",
        "synthetic.d_img",
        "eval.methods",
        "eval.model_dirs",
        "eval.tie_policy",
    };
    return keys;
}

class RunConfig {
  public:
    RunConfig() = default;

    static RunConfig parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("config: cannot open: " + path);
        RunConfig config;
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const std::string trimmed = trim(line);
            if (trimmed.empty() || trimmed[0] == '#') continue;
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("config: line " + std::to_string(line_no) +
                                  ": expected key = value");
            }
            config.set(trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
        }
        return config;
    }

    void set(const std::string& key, const std::string& value) {
        if (!known_config_keys().count(key)) {
            throw ConfigError("config: unknown key: " + key);
        }
        values_[key] = value;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string str(const std::string& key, const std::string& fallback = "") const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    std::string require_str(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end() || it->second.empty()) {
            throw ConfigError("config: missing required key: " + key);
        }
        return it->second;
    }

    int64_t i64(const std::string& key, int64_t fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            size_t pos = 0;
            const int64_t v = std::stoll(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument(it->second);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config: key " + key + " expects an integer, got \"" + it->second +
                              "\"");
        }
    }

    double f64(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument(it->second);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config: key " + key + " expects a number, got \"" + it->second +
                              "\"");
        }
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("config: cannot open for writing: " + path);
        for (const auto& [key, value] : values_) out << key << " = " << value << '\n';
    }

  private:
    static std::string trim(std::string_view s) {
        size_t begin = 0, end = s.size();
        while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
        while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
        return std::string(s.substr(begin, end - begin));
    }

    std::map<std::string, std::string> values_;
};

inline std::vector<std::string> split_csv(const std::string& csv) {
    std::vector<std::string> out;
    std::string current;
    for (char ch : csv) {
        if (ch == ',') {
            if (!current.empty()) out.push_back(current);
            current.clear();
        } else if (!std::isspace(static_cast<unsigned char>(ch))) {
            current.push_back(ch);
        }
    }
    if (!current.empty()) out.push_back(current);
    return out;
}

}  // namespace keyex

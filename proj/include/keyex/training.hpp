#pragma once

// Training loop and orchestration: exponential temperature annealing, seeded
// shuffling and word dropout from a single stream, Adam updates, loss
// logging, checkpointing, run-directory artifacts, and the ablation suite.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "keyex/adam.hpp"
#include "keyex/baselines.hpp"
#include "keyex/config.hpp"
#include "keyex/eval.hpp"
#include "keyex/model.hpp"

namespace keyex {

struct TemperatureSchedule {
    double tau0 = 0.5;
    double rate = 3.0e-5;
    double tau_min = 0.1;

    void validate() const {
        if (!(tau0 > tau_min) || !(tau_min > 0) || !(rate > 0)) {
            throw ConfigError("temperature schedule requires tau0 > tau_min > 0 and rate > 0");
        }
    }

    // max(tau0 * exp(-rate * i), tau_min); i counts optimizer steps across
    // epochs, starting at 0.
    double at(int64_t iteration) const {
        if (iteration < 0) throw ValidationError("temperature_at: iteration must be >= 0");
        return std::max(tau0 * std::exp(-rate * static_cast<double>(iteration)), tau_min);
    }
};

struct TrainConfig {
    int epochs = 30;
    int batch_size = 64;
    uint64_t seed = 1;
    double learning_rate = 1e-3;
    int64_t checkpoint_interval = 0;  // optimizer steps between checkpoints; 0 = final only
    TemperatureSchedule schedule;

    void validate() const {
        if (epochs <= 0 || batch_size <= 0) {
            throw ConfigError("train config: epochs and batch_size must be positive");
        }
        if (!(learning_rate > 0)) throw ConfigError("train config: learning_rate must be > 0");
        if (checkpoint_interval < 0) {
            throw ConfigError("train config: checkpoint_interval must be >= 0");
        }
        schedule.validate();
    }
};

struct IterationStats {
    int64_t iteration = 0;  // 1-based optimizer step
    double tau = 0.0;
    double entire = 0.0;        // batch means
    double answer_bow = 0.0;
    double question_bow = 0.0;
    double total = 0.0;
    int64_t predicted_tokens = 0;  // summed over the batch
};

inline void append_loss_log(std::ofstream& out, const IterationStats& s) {
    char line[256];
    std::snprintf(line, sizeof(line), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(s.iteration), s.tau, s.entire, s.answer_bow,
                  s.question_bow, s.total);
    out << line;
}

// One optimization pass over pre-encoded examples. Draw order from rng per
// epoch: the shuffle first, then per-example word-dropout decisions in batch
// order. Deterministic for a fixed starting rng state.
inline std::vector<IterationStats> train_loop(ModelParams& params,
                                              std::span<const EncodedExample> examples,
                                              const TrainConfig& config, Rng& rng,
                                              const std::string& out_dir = "") {
    config.validate();
    if (examples.empty()) throw ValidationError("train: empty training set");

    Adam optimizer(params.trainable(), {.learning_rate = config.learning_rate});
    std::vector<IterationStats> log;
    std::ofstream loss_file;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        loss_file.open(std::filesystem::path(out_dir) / "loss_log.csv");
        loss_file << "# iter,tau,L_all,L_a,L_q,L\n";
    }

    std::vector<size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    int64_t step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(config.batch_size)) {
            const size_t end =
                std::min(order.size(), begin + static_cast<size_t>(config.batch_size));
            const double inv_batch = 1.0 / static_cast<double>(end - begin);
            const double tau = config.schedule.at(step);

            IterationStats stats;
            stats.iteration = step + 1;
            stats.tau = tau;
            optimizer.zero_grad();
            try {
                for (size_t k = begin; k < end; ++k) {
                    const EncodedExample& ex = examples[order[k]];
                    ExampleLoss loss = model_loss(params, ex, tau, rng);
                    scale(loss.graph, inv_batch).backward();
                    stats.entire += loss.parts.entire * inv_batch;
                    stats.answer_bow += loss.parts.answer_bow * inv_batch;
                    stats.question_bow += loss.parts.question_bow * inv_batch;
                    stats.total += loss.parts.total() * inv_batch;
                    stats.predicted_tokens += loss.predicted_tokens;
                }
            } catch (const NumericError& e) {
                std::string ids;
                for (size_t k = begin; k < end; ++k) {
                    if (!ids.empty()) ids += ", ";
                    ids += examples[order[k]].example_id;
                }
                const std::string message = "training aborted at iteration " +
                                            std::to_string(step + 1) + ": " + e.what() +
                                            "; offending batch: [" + ids + "]";
                if (!out_dir.empty()) {
                    std::ofstream dump(std::filesystem::path(out_dir) / "diagnostic_dump.txt");
                    dump << message << '\n';
                }
                throw NumericError(message);
            }
            optimizer.step();
            ++step;
            log.push_back(stats);
            if (loss_file.is_open()) append_loss_log(loss_file, stats);
            if (config.checkpoint_interval > 0 && step % config.checkpoint_interval == 0 &&
                !out_dir.empty()) {
                char name[64];
                std::snprintf(name, sizeof(name), "checkpoint_%06lld.kexp",
                              static_cast<long long>(step));
                checkpoint::save((std::filesystem::path(out_dir) / name).string(),
                                 params.named_all());
            }
        }
    }
    return log;
}

// ---------------------------------------------------------------------------
// Run-directory artifacts
// ---------------------------------------------------------------------------

inline ModelConfig model_config_from(const RunConfig& rc) {
    ModelConfig c;
    c.d_img = static_cast<int>(rc.i64("model.d_img", c.d_img));
    c.d_e = static_cast<int>(rc.i64("model.d_e", c.d_e));
    c.attn_hidden = static_cast<int>(rc.i64("model.attn_hidden", c.attn_hidden));
    c.lstm_hidden = static_cast<int>(rc.i64("model.lstm_hidden", c.lstm_hidden));
    c.decoder_input_dim = static_cast<int>(rc.i64("model.decoder_input_dim", 0));
    c.max_len = static_cast<int>(rc.i64("model.max_len", c.max_len));
    c.lambda_all = rc.f64("model.lambda_all", c.lambda_all);
    c.lambda_a = rc.f64("model.lambda_a", c.lambda_a);
    c.lambda_q = rc.f64("model.lambda_q", c.lambda_q);
    c.word_dropout = rc.f64("model.word_dropout", c.word_dropout);
    c.ablation = parse_ablation(rc.str("model.ablation", "none"));
    return c;
}

inline RunConfig to_run_config(const ModelConfig& c) {
    RunConfig rc;
    auto put_int = [&rc](const char* key, int64_t v) { rc.set(key, std::to_string(v)); };
    auto put_double = [&rc](const char* key, double v) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        rc.set(key, buf);
    };
    put_int("model.d_img", c.d_img);
    put_int("model.d_e", c.d_e);
    put_int("model.attn_hidden", c.attn_hidden);
    put_int("model.lstm_hidden", c.lstm_hidden);
    put_int("model.decoder_input_dim", c.decoder_input_dim);
    put_int("model.max_len", c.max_len);
    put_double("model.lambda_all", c.lambda_all);
    put_double("model.lambda_a", c.lambda_a);
    put_double("model.lambda_q", c.lambda_q);
    put_double("model.word_dropout", c.word_dropout);
    rc.set("model.ablation", ablation_name(c.ablation));
    return rc;
}

inline void save_model_dir(const std::string& dir, const ModelParams& params,
                           const Vocabulary& answer_vocab, const Vocabulary& question_vocab) {
    std::filesystem::create_directories(dir);
    const auto base = std::filesystem::path(dir);
    checkpoint::save((base / "checkpoint.kexp").string(), params.named_all());
    answer_vocab.save((base / "answer_vocab.txt").string());
    question_vocab.save((base / "question_vocab.txt").string());
    to_run_config(params.config).save((base / "model.cfg").string());
}

struct LoadedModel {
    ModelParams params;
    Vocabulary answer_vocab;
    Vocabulary question_vocab;
};

inline LoadedModel load_model_dir(const std::string& dir) {
    const auto base = std::filesystem::path(dir);
    if (!std::filesystem::exists(base / "checkpoint.kexp")) {
        throw IoError("model dir: no checkpoint.kexp under " + dir);
    }
    const ModelConfig config = model_config_from(RunConfig::parse_file((base / "model.cfg").string()));
    LoadedModel out{
        ModelParams::from_named(config, checkpoint::load((base / "checkpoint.kexp").string())),
        Vocabulary::load((base / "answer_vocab.txt").string()),
        Vocabulary::load((base / "question_vocab.txt").string())};
    if (out.params.n_answer_vocab != out.answer_vocab.size() ||
        out.params.n_question_vocab != out.question_vocab.size()) {
        throw ValidationError("model dir: vocabulary files do not match checkpoint shapes");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Full pipeline: vocab + embeddings + init + loop (+ artifacts)
// ---------------------------------------------------------------------------

struct TrainArtifacts {
    ModelParams params;
    ModelParams initial;  // snapshot right after initialization
    std::vector<IterationStats> log;
    Vocabulary answer_vocab;
    Vocabulary question_vocab;
    std::vector<EncodedExample> encoded_train;
    std::vector<std::string> warnings;
};

// Master rng draw order: answer embedding table, question embedding table,
// model parameters, then the training loop.
inline TrainArtifacts train_pipeline(const std::vector<VqaExample>& train_examples,
                                     const ImageFeatureStore& features, ModelConfig model_config,
                                     const TrainConfig& train_config,
                                     const std::string& embeddings_path = "", int min_count = 1,
                                     const std::string& out_dir = "") {
    if (train_examples.empty()) throw ValidationError("train: empty training set");
    model_config.d_img = features.dim();
    model_config.validate();
    train_config.validate();

    std::vector<std::vector<std::string>> answers, questions;
    answers.reserve(train_examples.size());
    questions.reserve(train_examples.size());
    for (const auto& ex : train_examples) {
        answers.push_back(tokenize(ex.answer));
        questions.push_back(tokenize(ex.question));
    }

    TrainArtifacts art;
    art.answer_vocab = Vocabulary::build(answers, min_count);
    art.question_vocab = Vocabulary::build(questions, min_count);

    Rng rng(train_config.seed);
    EmbeddingTable answer_table =
        embeddings_path.empty()
            ? random_embedding_table(art.answer_vocab, model_config.d_e, rng, false)
            : load_embeddings(embeddings_path, art.answer_vocab, model_config.d_e, rng, false);
    EmbeddingTable question_table =
        embeddings_path.empty()
            ? random_embedding_table(art.question_vocab, model_config.d_e, rng, false)
            : load_embeddings(embeddings_path, art.question_vocab, model_config.d_e, rng, false);

    art.params = ModelParams::init(model_config, answer_table, question_table, rng);
    art.encoded_train.reserve(train_examples.size());
    for (const auto& ex : train_examples) {
        art.encoded_train.push_back(encode_example(ex, features, art.answer_vocab,
                                                   art.question_vocab, art.params,
                                                   &art.warnings));
    }
    art.initial = art.params.deep_copy();
    art.log = train_loop(art.params, art.encoded_train, train_config, rng, out_dir);

    if (!out_dir.empty()) {
        save_model_dir(out_dir, art.params, art.answer_vocab, art.question_vocab);
    }
    return art;
}

// ---------------------------------------------------------------------------
// Evaluation bridges
// ---------------------------------------------------------------------------

inline std::vector<ExtractionRow> model_extraction_rows(
    const ModelParams& params, std::span<const EncodedExample> examples) {
    std::vector<ExtractionRow> rows;
    rows.reserve(examples.size());
    for (const auto& ex : examples) {
        KeywordExtraction got = extract_keyword(params, ex);
        ExtractionRow row;
        row.example_id = ex.example_id;
        row.question_type = ex.question_type;
        row.answer_tokens = ex.answer_tokens;
        row.scores = got.scores;
        row.predicted = got.token;
        row.gold_tokens = ex.keyword_tokens;
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::vector<ExtractionRow> tfidf_extraction_rows(std::span<const VqaExample> examples,
                                                        const IdfTable& idf) {
    std::vector<ExtractionRow> rows;
    rows.reserve(examples.size());
    for (const auto& ex : examples) {
        ExtractionRow row;
        row.example_id = ex.example_id;
        row.question_type =
            ex.question_type.empty() ? derive_question_type(ex.question) : ex.question_type;
        row.answer_tokens = tokenize(ex.answer);
        if (row.answer_tokens.empty()) throw ValidationError("tfidf: empty answer");
        BaselineExtraction got = tfidf_extract(row.answer_tokens, idf);
        row.scores = std::move(got.scores);
        row.predicted = std::move(got.token);
        if (ex.has_keyword()) row.gold_tokens = tokenize(ex.keyword);
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::vector<ExtractionRow> embedrank_extraction_rows(std::span<const VqaExample> examples,
                                                            const EmbeddingTable& table,
                                                            const Vocabulary& vocab) {
    std::vector<ExtractionRow> rows;
    rows.reserve(examples.size());
    for (const auto& ex : examples) {
        ExtractionRow row;
        row.example_id = ex.example_id;
        row.question_type =
            ex.question_type.empty() ? derive_question_type(ex.question) : ex.question_type;
        row.answer_tokens = tokenize(ex.answer);
        if (row.answer_tokens.empty()) throw ValidationError("embedrank: empty answer");
        BaselineExtraction got = embedrank_extract(row.answer_tokens, table, vocab);
        row.scores = std::move(got.scores);
        row.predicted = std::move(got.token);
        if (ex.has_keyword()) row.gold_tokens = tokenize(ex.keyword);
        rows.push_back(std::move(row));
    }
    return rows;
}

struct DatasetLoss {
    LossBreakdown mean_parts;  // per-example means
    double per_token_entire = 0.0;
};

// Deterministic measurement pass: no word dropout, fixed tau.
inline DatasetLoss dataset_loss(const ModelParams& params,
                                std::span<const EncodedExample> examples, double tau) {
    if (examples.empty()) throw ValidationError("dataset_loss: no examples");
    ModelParams eval_params = params;  // shared tensors, private config copy
    eval_params.config.word_dropout = 0.0;
    Rng rng(0);
    DatasetLoss out;
    int64_t tokens = 0;
    double entire_sum = 0.0;
    NoGradGuard guard;
    for (const auto& ex : examples) {
        ExampleLoss loss = model_loss(eval_params, ex, tau, rng);
        out.mean_parts.entire += loss.parts.entire;
        out.mean_parts.answer_bow += loss.parts.answer_bow;
        out.mean_parts.question_bow += loss.parts.question_bow;
        entire_sum += loss.parts.entire;
        tokens += loss.predicted_tokens;
    }
    const double inv = 1.0 / static_cast<double>(examples.size());
    out.mean_parts.entire *= inv;
    out.mean_parts.answer_bow *= inv;
    out.mean_parts.question_bow *= inv;
    out.mean_parts.lambda_all = params.config.lambda_all;
    out.mean_parts.lambda_a = params.config.lambda_a;
    out.mean_parts.lambda_q = params.config.lambda_q;
    out.per_token_entire = entire_sum / static_cast<double>(tokens);
    return out;
}

// ---------------------------------------------------------------------------
// Ablation suite
// ---------------------------------------------------------------------------

struct AblationOutcome {
    std::string variant;
    MethodEval eval;  // over the validation split
    bool question_bow_unchanged = false;  // final == initial, bitwise
};

struct AblationResult {
    std::vector<AblationOutcome> variants;
    std::string table;
};

// Trains the four variants (full, no_dq, no_da_dq, lstm_disc) under the same
// seed and data, evaluates each on the validation split, and renders one
// comparison table.
inline AblationResult run_ablation_suite(const std::vector<VqaExample>& train_examples,
                                         const std::vector<VqaExample>& val_examples,
                                         const ImageFeatureStore& features,
                                         ModelConfig base_config, const TrainConfig& train_config,
                                         const std::string& embeddings_path = "",
                                         int min_count = 1, const std::string& out_dir = "") {
    static const std::pair<Ablation, const char*> kVariants[] = {
        {Ablation::none, "full"},
        {Ablation::no_dq, "no_dq"},
        {Ablation::no_da_dq, "no_da_dq"},
        {Ablation::lstm_disc, "lstm_disc"},
    };
    AblationResult result;
    std::vector<MethodEval> rows;
    for (const auto& [ablation, name] : kVariants) {
        ModelConfig config = base_config;
        config.ablation = ablation;
        const std::string variant_dir =
            out_dir.empty() ? "" : (std::filesystem::path(out_dir) / name).string();
        TrainArtifacts art = train_pipeline(train_examples, features, config, train_config,
                                            embeddings_path, min_count, variant_dir);
        std::vector<EncodedExample> encoded_val;
        encoded_val.reserve(val_examples.size());
        for (const auto& ex : val_examples) {
            encoded_val.push_back(
                encode_example(ex, features, art.answer_vocab, art.question_vocab, art.params));
        }
        AblationOutcome outcome;
        outcome.variant = name;
        outcome.eval = evaluate_extractions(name, model_extraction_rows(art.params, encoded_val));
        outcome.question_bow_unchanged =
            art.params.question_bow_weight.values() == art.initial.question_bow_weight.values() &&
            art.params.question_bow_bias.values() == art.initial.question_bow_bias.values();
        rows.push_back(outcome.eval);
        result.variants.push_back(std::move(outcome));
    }
    result.table = render_comparison_table(rows);
    if (!out_dir.empty()) {
        std::ofstream report(std::filesystem::path(out_dir) / "ablation_report.txt");
        report << result.table;
        std::ofstream jsonl(std::filesystem::path(out_dir) / "ablation_report.jsonl");
        jsonl << to_report_jsonl(rows, "validation");
    }
    return result;
}

}  // namespace keyex

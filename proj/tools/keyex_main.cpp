// keyex: unsupervised keyword extraction from full-sentence VQA answers.
// Subcommands cover synthetic data generation, training, extraction, the
// classical baselines, evaluation, the ablation suite, and a gradient-check
// battery for the math core.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "keyex/baselines.hpp"
#include "keyex/config.hpp"
#include "keyex/data.hpp"
#include "keyex/eval.hpp"
#include "keyex/grad_check.hpp"
#include "keyex/model.hpp"
#include "keyex/training.hpp"

namespace fs = std::filesystem;
using namespace keyex;

namespace {

struct CommonFlags {
    std::string config_path;
    std::optional<int64_t> seed;
    std::string out;
    std::string methods;
    std::string ablation;
    std::string data;
    std::string model_dirs;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "run configuration file");
    cmd->add_option("--seed", flags.seed, "random seed (overrides the config)");
    cmd->add_option("--out", flags.out, "output directory (overrides the config)");
    cmd->allow_extras();
}

// Leftover "--section.key value" tokens become config overrides; unknown keys
// are rejected by RunConfig.
RunConfig resolve_config(CLI::App* cmd, const CommonFlags& flags) {
    RunConfig rc;
    if (!flags.config_path.empty()) rc = RunConfig::parse_file(flags.config_path);
    const auto extras = cmd->remaining();
    for (size_t i = 0; i < extras.size(); ++i) {
        std::string key = extras[i];
        if (key.rfind("--", 0) != 0) {
            throw UsageError("unexpected argument: " + key);
        }
        key = key.substr(2);
        std::string value;
        const auto eq = key.find('=');
        if (eq != std::string::npos) {
            value = key.substr(eq + 1);
            key = key.substr(0, eq);
        } else {
            if (i + 1 >= extras.size()) throw UsageError("missing value for --" + key);
            value = extras[++i];
        }
        try {
            rc.set(key, value);
        } catch (const ConfigError&) {
            throw UsageError("unknown flag: --" + key);
        }
    }
    if (flags.seed) rc.set("seed", std::to_string(*flags.seed));
    if (!flags.out.empty()) rc.set("out", flags.out);
    if (!flags.methods.empty()) rc.set("eval.methods", flags.methods);
    if (!flags.ablation.empty()) rc.set("model.ablation", flags.ablation);
    if (!flags.data.empty()) rc.set("data.val", flags.data);
    if (!flags.model_dirs.empty()) rc.set("eval.model_dirs", flags.model_dirs);
    return rc;
}

SyntheticSpec synthetic_spec_from(const RunConfig& rc) {
    SyntheticSpec spec;
    spec.n_train = static_cast<int>(rc.i64("synthetic.n_train", spec.n_train));
    spec.n_val = static_cast<int>(rc.i64("synthetic.n_val", spec.n_val));
    spec.n_keyword_classes =
        static_cast<int>(rc.i64("synthetic.n_classes", spec.n_keyword_classes));
    spec.n_templates = static_cast<int>(rc.i64("synthetic.n_templates", spec.n_templates));
    spec.noise_std = rc.f64("synthetic.noise_std", spec.noise_std);
    spec.d_img = static_cast<int>(rc.i64("synthetic.d_img", spec.d_img));
    spec.seed = static_cast<uint64_t>(rc.i64("seed", 7));
    return spec;
}

TrainConfig train_config_from(const RunConfig& rc) {
    TrainConfig tc;
    tc.epochs = static_cast<int>(rc.i64("train.epochs", tc.epochs));
    tc.batch_size = static_cast<int>(rc.i64("train.batch_size", tc.batch_size));
    tc.learning_rate = rc.f64("train.learning_rate", tc.learning_rate);
    tc.checkpoint_interval = rc.i64("train.checkpoint_interval", 0);
    tc.seed = static_cast<uint64_t>(rc.i64("seed", 1));
    tc.schedule.tau0 = rc.f64("train.tau0", tc.schedule.tau0);
    tc.schedule.rate = rc.f64("train.tau_rate", tc.schedule.rate);
    tc.schedule.tau_min = rc.f64("train.tau_min", tc.schedule.tau_min);
    return tc;
}

std::string sibling_or(const RunConfig& rc, const char* key, const std::string& data_path,
                       const char* name) {
    if (rc.has(key)) return rc.str(key);
    return (fs::path(data_path).parent_path() / name).string();
}

std::vector<VqaExample> load_examples(const std::string& path) {
    std::vector<std::string> warnings;
    auto examples = load_dataset(path, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << path << ": " << w << "\n";
    return examples;
}

ImageFeatureStore load_features(const RunConfig& rc, const std::string& data_path) {
    const std::string bin = sibling_or(rc, "data.features", data_path, "features.bin");
    const std::string idx = sibling_or(rc, "data.feature_index", data_path, "features.idx");
    return ImageFeatureStore::load(bin, idx);
}

void write_predictions(const std::string& path, std::span<const ExtractionRow> rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const auto& row : rows) {
        nlohmann::json j;
        j["example_id"] = row.example_id;
        j["keyword"] = row.predicted;
        j["scores"] = row.scores;
        out << j.dump() << "\n";
    }
}

std::vector<EncodedExample> encode_all(const std::vector<VqaExample>& examples,
                                       const ImageFeatureStore& features,
                                       const LoadedModel& model) {
    std::vector<EncodedExample> encoded;
    encoded.reserve(examples.size());
    std::vector<std::string> warnings;
    for (const auto& ex : examples) {
        encoded.push_back(encode_example(ex, features, model.answer_vocab, model.question_vocab,
                                         model.params, &warnings));
    }
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    return encoded;
}

// Answer-side vocabulary and embedding table for the EmbedRank baseline; the
// table comes from the embeddings file when configured, otherwise from the
// seeded random initialization.
std::pair<Vocabulary, EmbeddingTable> baseline_embeddings(const RunConfig& rc,
                                                          const std::vector<VqaExample>& train) {
    std::vector<std::vector<std::string>> docs;
    docs.reserve(train.size());
    for (const auto& ex : train) docs.push_back(tokenize(ex.answer));
    Vocabulary vocab = Vocabulary::build(docs, static_cast<int>(rc.i64("data.min_count", 1)));
    const int dim = static_cast<int>(rc.i64("model.d_e", 300));
    Rng rng(static_cast<uint64_t>(rc.i64("seed", 1)));
    EmbeddingTable table =
        rc.has("data.embeddings")
            ? load_embeddings(rc.str("data.embeddings"), vocab, dim, rng, false)
            : random_embedding_table(vocab, dim, rng, false);
    return {std::move(vocab), std::move(table)};
}

IdfTable idf_from_train(const RunConfig& rc) {
    const auto train = load_examples(rc.require_str("data.train"));
    std::vector<std::vector<std::string>> docs;
    docs.reserve(train.size());
    for (const auto& ex : train) docs.push_back(tokenize(ex.answer));
    return build_idf(docs);
}

int cmd_gen_synthetic(const RunConfig& rc) {
    SyntheticSpec spec = synthetic_spec_from(rc);
    const std::string out = rc.require_str("out");
    auto data = generate_synthetic(spec);
    write_synthetic(data, out);
    std::printf("wrote %zu train / %zu val examples (%d keyword classes, %d templates) to %s\n",
                data.train.size(), data.val.size(), spec.n_keyword_classes, spec.n_templates,
                out.c_str());
    return 0;
}

int cmd_train(const RunConfig& rc) {
    const std::string train_path = rc.require_str("data.train");
    const std::string out = rc.require_str("out");
    auto train_examples = load_examples(train_path);
    auto features = load_features(rc, train_path);
    ModelConfig mc = model_config_from(rc);
    TrainConfig tc = train_config_from(rc);

    auto art = train_pipeline(train_examples, features, mc, tc, rc.str("data.embeddings"),
                              static_cast<int>(rc.i64("data.min_count", 1)), out);
    for (const auto& w : art.warnings) std::cerr << "warning: " << w << "\n";
    std::printf("trained %lld iterations; final losses: L_all=%.4f L_a=%.4f L_q=%.4f\n",
                static_cast<long long>(art.log.size()), art.log.back().entire,
                art.log.back().answer_bow, art.log.back().question_bow);
    std::printf("artifacts in %s\n", out.c_str());

    if (rc.has("data.val")) {
        auto val = load_examples(rc.str("data.val"));
        LoadedModel model{art.params, art.answer_vocab, art.question_vocab};
        auto encoded = encode_all(val, features, model);
        auto eval = evaluate_extractions("model", model_extraction_rows(art.params, encoded));
        std::vector<MethodEval> rows{eval};
        std::fputs(render_comparison_table(rows).c_str(), stdout);
    }
    return 0;
}

int cmd_extract(const RunConfig& rc, const std::string& model_dir, std::string out_file) {
    if (model_dir.empty()) throw ConfigError("extract requires --model-dir");
    const std::string data_path = rc.require_str("data.val");
    LoadedModel model = load_model_dir(model_dir);
    auto examples = load_examples(data_path);
    auto features = load_features(rc, data_path);
    auto encoded = encode_all(examples, features, model);
    auto rows = model_extraction_rows(model.params, encoded);
    if (out_file.empty()) out_file = (fs::path(model_dir) / "predictions.jsonl").string();
    write_predictions(out_file, rows);
    std::printf("wrote %zu predictions to %s\n", rows.size(), out_file.c_str());
    return 0;
}

int cmd_baseline(const RunConfig& rc) {
    const std::string data_path = rc.require_str("data.val");
    const std::string out = rc.require_str("out");
    fs::create_directories(out);
    auto examples = load_examples(data_path);
    auto methods = split_csv(rc.str("eval.methods", "tfidf,embedrank"));
    const TiePolicy policy = parse_tie_policy(rc.str("eval.tie_policy", "optimistic"));
    auto train_examples = load_examples(rc.require_str("data.train"));

    std::vector<MethodEval> evals;
    for (const auto& method : methods) {
        std::vector<ExtractionRow> rows;
        if (method == "tfidf") {
            std::vector<std::vector<std::string>> docs;
            for (const auto& ex : train_examples) docs.push_back(tokenize(ex.answer));
            IdfTable idf = build_idf(docs);
            idf.save((fs::path(out) / "idf.tsv").string());
            rows = tfidf_extraction_rows(examples, idf);
        } else if (method == "embedrank") {
            auto [vocab, table] = baseline_embeddings(rc, train_examples);
            rows = embedrank_extraction_rows(examples, table, vocab);
        } else {
            throw ConfigError("baseline: unknown method \"" + method +
                              "\" (expected tfidf or embedrank)");
        }
        write_predictions((fs::path(out) / ("pred_" + method + ".jsonl")).string(), rows);
        evals.push_back(evaluate_extractions(method, rows, policy));
    }
    std::fputs(render_comparison_table(evals).c_str(), stdout);
    return 0;
}

int cmd_eval(const RunConfig& rc) {
    const std::string data_path = rc.require_str("data.val");
    auto examples = load_examples(data_path);
    auto methods = split_csv(rc.str("eval.methods", "model,tfidf,embedrank"));
    const TiePolicy policy = parse_tie_policy(rc.str("eval.tie_policy", "optimistic"));

    std::vector<MethodEval> rows;
    std::vector<MethodEval> detailed;  // per-type tables
    for (const auto& method : methods) {
        if (method == "model") {
            auto dirs = split_csv(rc.str("eval.model_dirs", ""));
            if (dirs.empty()) {
                throw IoError("eval: method \"model\" requires eval.model_dirs / --model-dirs");
            }
            auto features = load_features(rc, data_path);
            // one evaluation per checkpoint; dirs grouped by ablation variant
            std::map<std::string, std::vector<MethodEval>> groups;
            for (const auto& dir : dirs) {
                LoadedModel model = load_model_dir(dir);
                auto encoded = encode_all(examples, features, model);
                auto eval = evaluate_extractions(
                    "model", model_extraction_rows(model.params, encoded), policy);
                std::string name = "model";
                if (model.params.config.ablation != Ablation::none) {
                    name += std::string(" (") + ablation_name(model.params.config.ablation) + ")";
                }
                groups[name].push_back(std::move(eval));
            }
            for (const auto& [name, seed_evals] : groups) {
                rows.push_back(merge_seed_evals(name, seed_evals));
                detailed.push_back(seed_evals.front());
                detailed.back().method = name;
            }
        } else if (method == "tfidf") {
            auto eval = evaluate_extractions(
                "tfidf", tfidf_extraction_rows(examples, idf_from_train(rc)), policy);
            rows.push_back(eval);
            detailed.push_back(std::move(eval));
        } else if (method == "embedrank") {
            auto train_examples = load_examples(rc.require_str("data.train"));
            auto [vocab, table] = baseline_embeddings(rc, train_examples);
            auto eval = evaluate_extractions(
                "embedrank", embedrank_extraction_rows(examples, table, vocab), policy);
            rows.push_back(eval);
            detailed.push_back(std::move(eval));
        } else {
            throw ConfigError("eval: unknown method \"" + method + "\"");
        }
    }

    std::string report = render_comparison_table(rows);
    report += "\n";
    for (const auto& d : detailed) {
        report += render_per_type_table(d);
        report += "\n";
    }
    std::fputs(report.c_str(), stdout);
    if (rc.has("out")) {
        const std::string out = rc.str("out");
        fs::create_directories(out);
        std::ofstream txt(fs::path(out) / "report.txt");
        txt << report;
        std::ofstream jsonl(fs::path(out) / "report.jsonl");
        jsonl << to_report_jsonl(rows, data_path);
        std::printf("report written to %s\n", out.c_str());
    }
    return 0;
}

int cmd_ablate(const RunConfig& rc) {
    const std::string train_path = rc.require_str("data.train");
    const std::string val_path = rc.require_str("data.val");
    auto train_examples = load_examples(train_path);
    auto val_examples = load_examples(val_path);
    auto features = load_features(rc, train_path);
    auto result = run_ablation_suite(train_examples, val_examples, features,
                                     model_config_from(rc), train_config_from(rc),
                                     rc.str("data.embeddings"),
                                     static_cast<int>(rc.i64("data.min_count", 1)),
                                     rc.str("out"));
    std::fputs(result.table.c_str(), stdout);
    return 0;
}

int cmd_grad_check(double tolerance) {
    Rng rng(2718281828ull);
    auto random_tensor = [&rng](Shape shape) {
        Tensor t = Tensor::zeros(std::move(shape), true);
        for (auto& v : t.values()) v = rng.uniform(-1.0, 1.0);
        return t;
    };

    struct Check {
        std::string name;
        GradCheckReport report;
    };
    std::vector<Check> checks;

    {
        std::vector<Tensor> in{random_tensor({3}), random_tensor({4, 3}), random_tensor({4})};
        checks.push_back({"linear_forward", grad_check([](std::span<const Tensor> t) {
                              return linear(t[0], t[1], t[2]);
                          }, in, tolerance)});
    }
    {
        std::vector<Tensor> in{random_tensor({6})};
        checks.push_back({"softmax_temp", grad_check([](std::span<const Tensor> t) {
                              return softmax_temp(t[0], 0.5);
                          }, in, tolerance)});
    }
    {
        std::vector<Tensor> in{random_tensor({5})};
        Tensor target = Tensor::of({5}, {0.3, 0.25, 0.2, 0.15, 0.1});
        checks.push_back({"cross_entropy", grad_check([target](std::span<const Tensor> t) {
                              return cross_entropy(t[0], target);
                          }, in, tolerance)});
    }
    {
        std::vector<Tensor> in{random_tensor({4})};
        for (auto& v : in[0].values()) v += 2.0;  // away from the zero vector
        checks.push_back({"l2_normalize", grad_check([](std::span<const Tensor> t) {
                              return l2_normalize(t[0]);
                          }, in, tolerance)});
    }
    {
        std::vector<Tensor> in{random_tensor({6}), random_tensor({6}), random_tensor({6})};
        checks.push_back({"layer_norm", grad_check([](std::span<const Tensor> t) {
                              return layer_norm(t[0], t[1], t[2]);
                          }, in, tolerance)});
    }
    {
        Rng lstm_rng(7);
        LstmParams p = init_lstm(3, 2, lstm_rng);
        std::vector<Tensor> in{random_tensor({3}), p.w_ih, p.w_hh, p.b, random_tensor({2}),
                               random_tensor({2})};
        checks.push_back({"lstm_cell_step", grad_check([](std::span<const Tensor> t) {
                              LstmParams lp{t[1], t[2], t[3], 3, 2};
                              auto s = lstm_cell_step(t[0], {t[4], t[5]}, lp);
                              return concat(s.h, s.c);
                          }, in, tolerance)});
    }

    bool all_ok = true;
    for (const auto& [name, report] : checks) {
        std::printf("%s %-16s max rel err %.3e (tolerance %.1e, %lld checks)\n",
                    report.passed() ? "PASS" : "FAIL", name.c_str(), report.max_rel_error,
                    report.tolerance, static_cast<long long>(report.checks));
        all_ok = all_ok && report.passed();
    }
    return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"keyword extraction from full-sentence VQA answers"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string model_dir;
    std::string out_file;
    double tolerance = 1e-5;

    auto* gen = app.add_subcommand("gen-synthetic", "generate a synthetic dataset");
    add_common(gen, flags);

    auto* train = app.add_subcommand("train", "train the extraction model");
    add_common(train, flags);
    train->add_option("--ablation", flags.ablation,
                      "model variant: none|no_dq|no_da_dq|lstm_disc");

    auto* extract = app.add_subcommand("extract", "extract keywords with a trained model");
    add_common(extract, flags);
    extract->add_option("--model-dir", model_dir, "trained run directory");
    extract->add_option("--data", flags.data, "dataset to extract from");
    extract->add_option("--predictions", out_file, "output predictions file");

    auto* baseline = app.add_subcommand("baseline", "run tfidf/embedrank baselines");
    add_common(baseline, flags);
    baseline->add_option("--methods", flags.methods, "comma-separated: tfidf,embedrank");
    baseline->add_option("--data", flags.data, "dataset to extract from");

    auto* eval = app.add_subcommand("eval", "compare methods on one dataset");
    add_common(eval, flags);
    eval->add_option("--methods", flags.methods, "comma-separated: model,tfidf,embedrank");
    eval->add_option("--model-dirs", flags.model_dirs, "comma-separated trained run dirs");
    eval->add_option("--data", flags.data, "dataset to evaluate on");

    auto* ablate = app.add_subcommand("ablate", "train and compare the ablation variants");
    add_common(ablate, flags);

    auto* gradcheck =
        app.add_subcommand("grad-check", "finite-difference battery for the math core");
    gradcheck->add_option("--tolerance", tolerance, "relative error tolerance");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
        app.exit(e);
        return 2;
    }

    CLI::App* cmd = app.get_subcommands().front();
    try {
        if (cmd == gradcheck) return cmd_grad_check(tolerance);
        RunConfig rc = resolve_config(cmd, flags);
        if (cmd == gen) return cmd_gen_synthetic(rc);
        if (cmd == train) return cmd_train(rc);
        if (cmd == extract) return cmd_extract(rc, model_dir, out_file);
        if (cmd == baseline) return cmd_baseline(rc);
        if (cmd == eval) return cmd_eval(rc);
        if (cmd == ablate) return cmd_ablate(rc);
    } catch (const UsageError& e) {
        std::cerr << "keyex " << cmd->get_name() << ": " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "keyex " << cmd->get_name() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "keyex " << cmd->get_name() << ": unexpected error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

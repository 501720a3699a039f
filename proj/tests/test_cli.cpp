// End-to-end runs of the keyex binary: generate, train, extract, baseline,
// eval, plus the exit-code contract.

#include <catch2/catch.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "keyex/data.hpp"

namespace fs = std::filesystem;

namespace {

const char* cli_path() { return KEYEX_CLI_PATH; }

int run_cli(const std::string& args) {
    const std::string cmd = std::string(cli_path()) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct CliWorld {
    fs::path root;
    fs::path data_dir;
    fs::path run_dir;

    CliWorld() {
        root = fs::temp_directory_path() / "keyex_cli_test";
        fs::remove_all(root);
        fs::create_directories(root);
        data_dir = root / "data";
        run_dir = root / "run1";
    }
    ~CliWorld() { fs::remove_all(root); }

    std::string gen_args(const fs::path& out) const {
        return "gen-synthetic --seed 5 --out " + out.string() +
               " --synthetic.n_train 120 --synthetic.n_val 40 --synthetic.n_classes 8"
               " --synthetic.d_img 8";
    }

    std::string train_args() const {
        return "train --seed 3 --out " + run_dir.string() + " --data.train " +
               (data_dir / "train.jsonl").string() +
               " --train.epochs 2 --train.batch_size 32 --model.d_e 8"
               " --model.attn_hidden 8 --model.lstm_hidden 10";
    }
};

}  // namespace

TEST_CASE("cli end-to-end: generate, train, extract, baseline, eval") {
    CliWorld w;
    REQUIRE(run_cli(w.gen_args(w.data_dir)) == 0);
    for (const char* name : {"train.jsonl", "val.jsonl", "features.bin", "features.idx"}) {
        CHECK(fs::exists(w.data_dir / name));
    }

    // reproducible under the same seed
    const fs::path data_again = w.root / "data2";
    REQUIRE(run_cli(w.gen_args(data_again)) == 0);
    CHECK(slurp(w.data_dir / "train.jsonl") == slurp(data_again / "train.jsonl"));
    CHECK(slurp(w.data_dir / "features.bin") == slurp(data_again / "features.bin"));

    REQUIRE(run_cli(w.train_args()) == 0);
    for (const char* name :
         {"checkpoint.kexp", "model.cfg", "answer_vocab.txt", "question_vocab.txt",
          "loss_log.csv"}) {
        CHECK(fs::exists(w.run_dir / name));
    }

    // extraction preserves dataset order 1:1
    const fs::path preds = w.root / "preds.jsonl";
    REQUIRE(run_cli("extract --model-dir " + w.run_dir.string() + " --data " +
                    (w.data_dir / "val.jsonl").string() + " --predictions " + preds.string()) ==
            0);
    auto examples = keyex::load_dataset((w.data_dir / "val.jsonl").string());
    std::ifstream in(preds);
    std::string line;
    size_t count = 0;
    while (std::getline(in, line)) {
        auto j = nlohmann::json::parse(line);
        REQUIRE(count < examples.size());
        CHECK(j["example_id"] == examples[count].example_id);
        CHECK(j.contains("keyword"));
        CHECK(j["scores"].is_array());
        ++count;
    }
    CHECK(count == examples.size());

    // baselines write one prediction file per method
    const fs::path base_dir = w.root / "baseline";
    REQUIRE(run_cli("baseline --methods tfidf,embedrank --data " +
                    (w.data_dir / "val.jsonl").string() + " --data.train " +
                    (w.data_dir / "train.jsonl").string() + " --model.d_e 8 --out " +
                    base_dir.string()) == 0);
    CHECK(fs::exists(base_dir / "pred_tfidf.jsonl"));
    CHECK(fs::exists(base_dir / "pred_embedrank.jsonl"));

    // full comparison, model + baselines
    const fs::path report_dir = w.root / "report";
    REQUIRE(run_cli("eval --methods model,tfidf,embedrank --model-dirs " + w.run_dir.string() +
                    " --data " + (w.data_dir / "val.jsonl").string() + " --data.train " +
                    (w.data_dir / "train.jsonl").string() + " --model.d_e 8 --out " +
                    report_dir.string()) == 0);
    CHECK(fs::exists(report_dir / "report.txt"));
    CHECK(fs::exists(report_dir / "report.jsonl"));
    const std::string report = slurp(report_dir / "report.txt");
    CHECK(report.find("model") != std::string::npos);
    CHECK(report.find("tfidf") != std::string::npos);
    CHECK(report.find("embedrank") != std::string::npos);

    // baselines only, no checkpoint required
    REQUIRE(run_cli("eval --methods tfidf,embedrank --data " +
                    (w.data_dir / "val.jsonl").string() + " --data.train " +
                    (w.data_dir / "train.jsonl").string() + " --model.d_e 8") == 0);
}

TEST_CASE("cli exit codes") {
    CliWorld w;
    SECTION("missing dataset is a validation failure") {
        CHECK(run_cli("train --out " + (w.root / "r").string() +
                      " --data.train /nonexistent/x.jsonl") == 1);
    }
    SECTION("missing required config key names the problem") {
        CHECK(run_cli("train --out " + (w.root / "r").string()) == 1);
    }
    SECTION("unknown subcommand is a usage error") {
        CHECK(run_cli("frobnicate") == 2);
    }
    SECTION("unknown flag is a usage error") {
        CHECK(run_cli("gen-synthetic --out " + (w.root / "g").string() + " --bogus.key 1") == 2);
    }
    SECTION("config file with unknown key is a validation failure") {
        const fs::path cfg = w.root / "bad.cfg";
        std::ofstream(cfg) << "nonsense.key = 1\n";
        CHECK(run_cli("gen-synthetic --config " + cfg.string()) == 1);
    }
    SECTION("grad-check battery passes") {
        CHECK(run_cli("grad-check") == 0);
    }
}

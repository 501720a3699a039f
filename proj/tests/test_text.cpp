#include <catch2/catch.hpp>

#include <filesystem>
#include <fstream>

#include "keyex/text.hpp"

using namespace keyex;

TEST_CASE("tokenize strips punctuation, lowercases and splits") {
    CHECK(tokenize("Is the cat black?") == std::vector<std::string>{"is", "the", "cat", "black"});
    CHECK(tokenize("").empty());
    auto toks = tokenize("The small round candle sits right in front of the bear.");
    REQUIRE(toks.size() == 11);
    CHECK(toks.back() == "bear");
    CHECK(tokenize("Wait, really?!") == std::vector<std::string>{"wait", "really"});
    CHECK(tokenize("  spaced\tout \n words ") == std::vector<std::string>{"spaced", "out", "words"});
}

TEST_CASE("tokenize is idempotent over join") {
    for (const char* text : {"Is the CAT black?", "a. b, c? d!", "one"}) {
        auto once = tokenize(text);
        auto twice = tokenize(join_tokens(once));
        CHECK(once == twice);
    }
}

TEST_CASE("vocabulary build respects min_count and tie ordering") {
    std::vector<std::vector<std::string>> corpus{{"a", "b", "a"}};
    SECTION("min_count 1 keeps both") {
        Vocabulary v = Vocabulary::build(corpus, 1);
        CHECK(v.size() == Vocabulary::kNumSpecials + 2);
        CHECK(v.id_of("a") == Vocabulary::kNumSpecials);  // highest frequency first
        CHECK(v.id_of("b") == Vocabulary::kNumSpecials + 1);
    }
    SECTION("min_count 2 keeps only the frequent token") {
        Vocabulary v = Vocabulary::build(corpus, 2);
        CHECK(v.size() == Vocabulary::kNumSpecials + 1);
        CHECK(v.id_of("b") == Vocabulary::kUnk);
    }
    SECTION("frequency ties broken lexicographically") {
        Vocabulary v = Vocabulary::build({{"zebra", "apple"}, {"zebra", "apple"}});
        CHECK(v.id_of("apple") < v.id_of("zebra"));
    }
    SECTION("deterministic across rebuilds") {
        std::vector<std::vector<std::string>> big{{"x", "y", "z"}, {"y", "z"}, {"z", "q"}};
        Vocabulary a = Vocabulary::build(big);
        Vocabulary b = Vocabulary::build(big);
        for (int id = 0; id < a.size(); ++id) CHECK(a.token_of(id) == b.token_of(id));
    }
    SECTION("empty corpus rejected") {
        CHECK_THROWS_AS(Vocabulary::build({}), ValidationError);
    }
}

TEST_CASE("vocabulary specials are fixed and unknown lookups map to unk") {
    Vocabulary v = Vocabulary::build({{"cat"}});
    CHECK(v.id_of("<pad>") == 0);
    CHECK(v.id_of("<unk>") == 1);
    CHECK(v.id_of("<bos>") == 2);
    CHECK(v.id_of("<eos>") == 3);
    CHECK(v.id_of("<mask>") == 4);
    CHECK(v.id_of("never-seen") == Vocabulary::kUnk);
}

TEST_CASE("vocabulary save/load preserves id assignment") {
    Vocabulary v = Vocabulary::build({{"cat", "dog", "cat", "emu"}});
    auto path = std::filesystem::temp_directory_path() / "keyex_vocab_test.txt";
    v.save(path.string());
    Vocabulary loaded = Vocabulary::load(path.string());
    REQUIRE(loaded.size() == v.size());
    for (int id = 0; id < v.size(); ++id) CHECK(loaded.token_of(id) == v.token_of(id));
    std::filesystem::remove(path);
}

TEST_CASE("bow_feature counts, normalizes, and folds OOV into unk") {
    Vocabulary v = Vocabulary::build({{"the", "cat", "sat"}});
    SECTION("counting") {
        std::vector<std::string> toks{"the", "cat", "sat", "the"};
        Tensor bow = bow_feature(toks, v);
        CHECK(bow.at(v.id_of("the")) == Approx(0.5));
        CHECK(bow.at(v.id_of("cat")) == Approx(0.25));
        CHECK(bow.at(v.id_of("sat")) == Approx(0.25));
    }
    SECTION("single token") {
        std::vector<std::string> toks{"cat"};
        CHECK(bow_feature(toks, v).at(v.id_of("cat")) == 1.0);
    }
    SECTION("all OOV goes to unk") {
        std::vector<std::string> toks{"zzz", "qqq"};
        CHECK(bow_feature(toks, v).at(Vocabulary::kUnk) == Approx(1.0));
    }
    SECTION("sums to one for random token lists") {
        std::vector<std::string> pool{"the", "cat", "sat", "zzz", "dog"};
        Rng rng(17);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<std::string> toks;
            const int len = 1 + static_cast<int>(rng.uniform_int(9));
            for (int i = 0; i < len; ++i)
                toks.push_back(pool[static_cast<size_t>(rng.uniform_int(5))]);
            Tensor bow = bow_feature(toks, v);
            double total = 0.0;
            for (int i = 0; i < bow.size(); ++i) total += bow.at(i);
            CHECK(total == Approx(1.0).margin(1e-9));
        }
    }
    SECTION("empty token list rejected") {
        std::vector<std::string> empty;
        CHECK_THROWS_AS(bow_feature(empty, v), ValidationError);
    }
}

TEST_CASE("load_embeddings") {
    auto path = std::filesystem::temp_directory_path() / "keyex_emb_test.txt";
    Vocabulary v = Vocabulary::build({{"cat", "dog"}});

    SECTION("file rows are copied through") {
        {
            std::ofstream out(path);
            out << "cat 0.1 0.2 0.3\n";
            out << "unrelated 9 9 9\n";
        }
        EmbeddingTable t = load_embeddings(path.string(), v, 3);
        CHECK(t.matrix.at2(v.id_of("cat"), 0) == Approx(0.1));
        CHECK(t.matrix.at2(v.id_of("cat"), 2) == Approx(0.3));
        CHECK(t.coverage == Approx(0.5));
        // the missing token row was drawn from the fixed seed
        CHECK(std::abs(t.matrix.at2(v.id_of("dog"), 0)) <= 0.1);
    }
    SECTION("empty file gives zero coverage and seeded random rows") {
        { std::ofstream out(path); }
        EmbeddingTable a = load_embeddings(path.string(), v, 4, uint64_t{99});
        EmbeddingTable b = load_embeddings(path.string(), v, 4, uint64_t{99});
        CHECK(a.coverage == 0.0);
        CHECK(a.matrix.values() == b.matrix.values());  // bit-for-bit reproducible
    }
    SECTION("wrong float count is a parse error naming the line") {
        {
            std::ofstream out(path);
            out << "cat 0.1 0.2 0.3\n";
            out << "dog 0.1\n";
        }
        CHECK_THROWS_WITH(load_embeddings(path.string(), v, 3),
                          Catch::Contains("line 2"));
    }
    SECTION("malformed float is a parse error") {
        {
            std::ofstream out(path);
            out << "cat 0.1 zzz 0.3\n";
        }
        CHECK_THROWS_AS(load_embeddings(path.string(), v, 3), ParseError);
    }
    std::filesystem::remove(path);
}

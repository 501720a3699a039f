#pragma once

// Dataset records and IO: JSON-lines examples, the flat-binary image-feature
// store, the highest-frequency annotation rule, and the synthetic
// planted-keyword generator used for desk-scale training.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "keyex/rng.hpp"
#include "keyex/text.hpp"

namespace keyex {

struct VqaExample {
    std::string example_id;
    std::string image_id;
    std::string question;
    std::string answer;
    std::string keyword;        // empty when absent; evaluation only
    std::string question_type;  // first two question tokens; derived when absent

    bool has_keyword() const { return !keyword.empty(); }

    // True when at least one keyword token occurs in the tokenized answer;
    // examples failing this are excluded from the accuracy denominator.
    bool keyword_evaluable() const {
        if (keyword.empty()) return false;
        const auto answer_tokens = tokenize(answer);
        for (const auto& kt : tokenize(keyword)) {
            for (const auto& at : answer_tokens) {
                if (kt == at) return true;
            }
        }
        return false;
    }
};

inline std::string derive_question_type(const std::string& question) {
    const auto toks = tokenize(question);
    if (toks.empty()) return "";
    if (toks.size() == 1) return toks[0];
    return toks[0] + " " + toks[1];
}

// One JSON object per line. Required: example_id, image_id, question, answer.
// Optional: keyword, question_type. A keyword absent from the answer tokens
// is kept but reported through *warnings.
inline std::vector<VqaExample> load_dataset(const std::string& path,
                                            std::vector<std::string>* warnings = nullptr) {
    std::ifstream in(path);
    if (!in) throw IoError("load_dataset: cannot open: " + path);
    std::vector<VqaExample> examples;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError("load_dataset: line " + std::to_string(line_no) + ": " + e.what());
        }
        VqaExample ex;
        for (const char* field : {"example_id", "image_id", "question", "answer"}) {
            if (!j.contains(field) || !j[field].is_string()) {
                throw ParseError("load_dataset: line " + std::to_string(line_no) +
                                 ": missing required string field \"" + field + "\"");
            }
        }
        ex.example_id = j["example_id"].get<std::string>();
        ex.image_id = j["image_id"].get<std::string>();
        ex.question = j["question"].get<std::string>();
        ex.answer = j["answer"].get<std::string>();
        if (ex.question.empty() || ex.answer.empty()) {
            throw ParseError("load_dataset: line " + std::to_string(line_no) +
                             ": question and answer must be nonempty");
        }
        if (j.contains("keyword")) ex.keyword = j["keyword"].get<std::string>();
        if (j.contains("question_type")) {
            ex.question_type = j["question_type"].get<std::string>();
        } else {
            ex.question_type = derive_question_type(ex.question);
        }
        if (ex.has_keyword() && !ex.keyword_evaluable() && warnings) {
            warnings->push_back("line " + std::to_string(line_no) + ": keyword \"" + ex.keyword +
                                "\" not found in answer tokens; example " + ex.example_id +
                                " excluded from accuracy");
        }
        examples.push_back(std::move(ex));
    }
    return examples;
}

inline void write_dataset(const std::string& path, std::span<const VqaExample> examples) {
    std::ofstream out(path);
    if (!out) throw IoError("write_dataset: cannot open for writing: " + path);
    for (const auto& ex : examples) {
        nlohmann::json j;
        j["example_id"] = ex.example_id;
        j["image_id"] = ex.image_id;
        j["question"] = ex.question;
        j["answer"] = ex.answer;
        if (ex.has_keyword()) j["keyword"] = ex.keyword;
        if (!ex.question_type.empty()) j["question_type"] = ex.question_type;
        out << j.dump() << '\n';
    }
}

// Unique modal annotation, or nullopt when the mode is tied (such examples
// are filtered from keyword evaluation).
inline std::optional<std::string> select_fsvqa_keyword(
    std::span<const std::string> annotations) {
    if (annotations.empty()) {
        throw ValidationError("select_fsvqa_keyword: empty annotation list");
    }
    std::map<std::string, int> counts;
    for (const auto& a : annotations) ++counts[a];
    int best = 0;
    int ties = 0;
    std::string winner;
    for (const auto& [token, count] : counts) {
        if (count > best) {
            best = count;
            ties = 1;
            winner = token;
        } else if (count == best) {
            ++ties;
        }
    }
    if (ties != 1) return std::nullopt;
    return winner;
}

// ---------------------------------------------------------------------------
// Image feature store: flat little-endian float64 payload plus a text index
// of "image_id<TAB>byte_offset" lines. All vectors share one dimension.
// ---------------------------------------------------------------------------

class ImageFeatureStore {
  public:
    static void write(const std::string& bin_path, const std::string& index_path,
                      std::span<const std::pair<std::string, std::vector<double>>> entries) {
        std::ofstream bin(bin_path, std::ios::binary);
        std::ofstream idx(index_path);
        if (!bin || !idx) throw IoError("feature store: cannot open output files");
        uint64_t offset = 0;
        for (const auto& [id, vec] : entries) {
            idx << id << '\t' << offset << '\n';
            for (double v : vec) {
                const uint64_t bits = std::bit_cast<uint64_t>(v);
                char bytes[8];
                for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
                bin.write(bytes, 8);
            }
            offset += vec.size() * 8;
        }
    }

    static ImageFeatureStore from_entries(
        std::span<const std::pair<std::string, std::vector<double>>> entries) {
        if (entries.empty()) throw ValidationError("feature store: no entries");
        ImageFeatureStore store;
        store.dim_ = static_cast<int>(entries.front().second.size());
        for (const auto& [id, vec] : entries) {
            if (static_cast<int>(vec.size()) != store.dim_) {
                throw ValidationError("feature store: inconsistent vector sizes");
            }
            store.features_.emplace(id, vec);
        }
        return store;
    }

    static ImageFeatureStore load(const std::string& bin_path, const std::string& index_path) {
        std::ifstream bin(bin_path, std::ios::binary);
        if (!bin) throw IoError("feature store: cannot open: " + bin_path);
        std::string payload((std::istreambuf_iterator<char>(bin)),
                            std::istreambuf_iterator<char>());
        std::ifstream idx(index_path);
        if (!idx) throw IoError("feature store: cannot open: " + index_path);

        std::vector<std::pair<std::string, uint64_t>> offsets;
        std::string line;
        int line_no = 0;
        while (std::getline(idx, line)) {
            ++line_no;
            if (line.empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) {
                throw ParseError("feature index: line " + std::to_string(line_no) +
                                 ": expected image_id<TAB>offset");
            }
            offsets.emplace_back(line.substr(0, tab),
                                 std::stoull(line.substr(tab + 1)));
        }
        if (offsets.empty()) throw ValidationError("feature store: empty index");

        // vector length is the uniform gap between consecutive offsets
        uint64_t stride = payload.size() - offsets.back().second;
        for (size_t i = 0; i + 1 < offsets.size(); ++i) {
            const uint64_t gap = offsets[i + 1].second - offsets[i].second;
            if (i == 0) stride = gap;
            if (gap != stride) {
                throw ValidationError("feature store: inconsistent vector sizes");
            }
        }
        if (stride == 0 || stride % 8 != 0 ||
            offsets.back().second + stride != payload.size()) {
            throw ValidationError("feature store: payload size does not match index");
        }

        ImageFeatureStore store;
        store.dim_ = static_cast<int>(stride / 8);
        for (const auto& [id, offset] : offsets) {
            std::vector<double> vec(static_cast<size_t>(store.dim_));
            for (int i = 0; i < store.dim_; ++i) {
                uint64_t bits = 0;
                for (int b = 0; b < 8; ++b) {
                    bits |= static_cast<uint64_t>(static_cast<uint8_t>(
                                payload[offset + static_cast<size_t>(i) * 8 + b]))
                            << (8 * b);
                }
                vec[static_cast<size_t>(i)] = std::bit_cast<double>(bits);
            }
            bool nonzero = false;
            for (double v : vec) nonzero = nonzero || v != 0.0;
            if (!nonzero) throw ValidationError("feature store: zero vector for " + id);
            store.features_.emplace(id, std::move(vec));
        }
        return store;
    }

    const std::vector<double>& get(const std::string& image_id) const {
        auto it = features_.find(image_id);
        if (it == features_.end()) {
            throw IoError("feature store: unknown image_id: " + image_id);
        }
        return it->second;
    }

    bool contains(const std::string& image_id) const { return features_.count(image_id) > 0; }
    int dim() const { return dim_; }
    size_t size() const { return features_.size(); }

  private:
    int dim_ = 0;
    std::unordered_map<std::string, std::vector<double>> features_;
};

// ---------------------------------------------------------------------------
// Synthetic planted-keyword data
// ---------------------------------------------------------------------------

struct SyntheticSpec {
    int n_train = 2000;
    int n_val = 500;
    int n_keyword_classes = 30;
    int n_templates = 8;
    double noise_std = 0.1;
    uint64_t seed = 7;
    int d_img = 16;
    // optional caps on the distractor pools (0 = full pool); small caps make
    // questions collide across examples, which tightens tiny overfit fixtures
    int n_objects = 0;
    int n_adjectives = 0;

    void validate() const {
        if (n_train <= 0 || n_val < 0 || n_keyword_classes <= 0 || n_templates <= 0 ||
            d_img <= 0) {
            throw ValidationError("synthetic spec: counts must be positive");
        }
        if (noise_std < 0) throw ValidationError("synthetic spec: noise_std must be >= 0");
        if (n_objects < 0 || n_adjectives < 0) {
            throw ValidationError("synthetic spec: pool caps must be >= 0");
        }
    }
};

struct SyntheticDataset {
    std::vector<VqaExample> train;
    std::vector<VqaExample> val;
    std::vector<std::pair<std::string, std::vector<double>>> features;
};

namespace synth {

// Word pools are mutually disjoint so the keyword occurs exactly once per
// answer. The extra answer-side content words (a shape word paired to the
// question adjective and a material paired to the adjective+object combo)
// are absent from the question but fully determined by it, which leaves the
// keyword as the only genuinely new information. Materials draw from a large
// pool, so they are rarer than keywords and bait frequency-based extractors;
// shapes draw from a small pool and stay common.
inline const std::vector<std::string>& keyword_pool() {
    static const std::vector<std::string> pool{
        "candle", "bear",    "ghost",   "apple",  "piano",   "kettle", "lantern", "mirror",
        "violin", "anchor",  "basket",  "camera", "engine",  "falcon", "garnet",  "hammer",
        "island", "jacket",  "ladder",  "magnet", "needle",  "orchid", "pencil",  "quartz",
        "rocket", "saddle",  "teapot",  "walnut", "zebra",   "barrel", "canoe",   "dagger",
        "easel",  "fiddle",  "goblet",  "helmet", "igloo",   "kayak",  "marble",  "nutmeg",
        "oyster", "pickle",  "quiver",  "ribbon", "sponge",  "turret", "urchin",  "vessel"};
    return pool;
}

inline const std::vector<std::string>& object_pool() {
    static const std::vector<std::string> pool{
        "table",   "shelf",   "window",  "fence",   "doorway", "counter", "bench", "cabinet",
        "stairs",  "carpet",  "curtain", "mantel",  "wall",    "desk",    "railing", "stool"};
    return pool;
}

inline const std::vector<std::string>& adjective_pool() {
    static const std::vector<std::string> pool{
        "white", "black", "red",    "green",  "blue",  "yellow", "purple", "orange",
        "gray",  "brown", "pink",   "silver", "golden", "pale",  "dark",   "bright"};
    return pool;
}

inline const std::vector<std::string>& material_pool() {
    static const std::vector<std::string> pool{
        "wooden",   "metal",    "plastic",  "glassy",   "stony",    "ceramic",  "woven",
        "painted",  "coppery",  "velvety",  "wickered", "carved",   "brassy",   "bamboo",
        "canvassy", "steely",   "pewter",   "bronzed",  "gilded",   "lacquered", "enameled",
        "polished", "varnished", "stitched", "quilted",  "braided",  "knitted",  "felted",
        "corked",   "tiled",    "papery",   "waxen",    "resin",    "chalky",   "sandy",
        "leaden",   "tinned",   "zinced",   "chromed",  "rusted",   "oiled",    "stained",
        "bleached", "dyed",     "frosted",  "smoked",   "etched",   "engraved", "embossed",
        "hammered", "welded",   "riveted",  "threaded", "beaded",   "fringed",  "tasseled",
        "pleated",  "hemmed",   "lined",    "padded",   "banded",   "ridged",   "grooved",
        "notched"};
    return pool;
}

inline const std::vector<std::string>& shape_pool() {
    static const std::vector<std::string> pool{
        "round", "square", "oval", "slender", "curved", "tall", "narrow", "wide"};
    return pool;
}

inline std::string keyword_for_class(int c) {
    const auto& pool = keyword_pool();
    if (c < static_cast<int>(pool.size())) return pool[static_cast<size_t>(c)];
    return "item" + std::to_string(c);
}

struct TemplatePair {
    // {a}=question adjective, {o}=question object, {s}=paired shape word,
    // {m}=paired material word, {k}=keyword
    const char* question;
    const char* answer;
};

inline const std::vector<TemplatePair>& template_pool() {
    static const std::vector<TemplatePair> pool{
        {"What is in front of the {a} {o}?", "The {s} {m} {k} is in front of the {o}."},
        {"Is the {a} {o} near anything?", "The {k} sits near the {a} {o}."},
        {"What does the {a} {o} have on it?", "The {o} has a {s} {k} made of {m} wood."},
        {"Which thing rests on the {a} {o}?", "A {m} {k} rests on the {s} {o}."},
        {"Do you see something behind the {a} {o}?", "Yes the {s} {k} stands behind the {o}."},
        {"Is there a {a} {o} in the picture?", "Yes and a {m} {k} leans against the {o}."},
        {"On which side of the {a} {o} is it?", "The {s} {k} is on the left side of the {o}."},
        {"Who is holding the {a} {o}?", "The man holds the {m} {k} near the {o}."},
    };
    return pool;
}

inline std::string fill_template(const char* pattern, const std::string& adj,
                                 const std::string& obj, const std::string& shape,
                                 const std::string& material, const std::string& kw) {
    std::string out;
    for (const char* p = pattern; *p; ++p) {
        if (*p == '{' && p[1] && p[2] == '}') {
            switch (p[1]) {
                case 'a': out += adj; break;
                case 'o': out += obj; break;
                case 's': out += shape; break;
                case 'm': out += material; break;
                case 'k': out += kw; break;
                default: throw ValidationError("synthetic template: unknown placeholder");
            }
            p += 2;
            continue;
        }
        out.push_back(*p);
    }
    return out;
}

}  // namespace synth

inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    if (spec.n_templates > static_cast<int>(synth::template_pool().size())) {
        throw ValidationError("synthetic spec: at most " +
                              std::to_string(synth::template_pool().size()) + " templates");
    }
    Rng rng(spec.seed);

    // class prototypes first, then per-example draws, all from one stream
    std::vector<std::vector<double>> prototypes;
    prototypes.reserve(static_cast<size_t>(spec.n_keyword_classes));
    for (int c = 0; c < spec.n_keyword_classes; ++c) {
        std::vector<double> proto(static_cast<size_t>(spec.d_img));
        for (auto& v : proto) v = rng.normal(0.0, 1.0);
        prototypes.push_back(std::move(proto));
    }

    SyntheticDataset data;
    const auto& objects = synth::object_pool();
    const auto& adjectives = synth::adjective_pool();
    const auto& materials = synth::material_pool();
    const auto& shapes = synth::shape_pool();

    auto make_example = [&](const std::string& split, int index) {
        const int cls = static_cast<int>(rng.uniform_int(spec.n_keyword_classes));
        const int tpl = static_cast<int>(rng.uniform_int(spec.n_templates));
        const int64_t n_obj = spec.n_objects > 0
                                  ? std::min<int64_t>(spec.n_objects, objects.size())
                                  : static_cast<int64_t>(objects.size());
        const int64_t n_adj = spec.n_adjectives > 0
                                  ? std::min<int64_t>(spec.n_adjectives, adjectives.size())
                                  : static_cast<int64_t>(adjectives.size());
        const auto obj_i = static_cast<size_t>(rng.uniform_int(n_obj));
        const auto adj_i = static_cast<size_t>(rng.uniform_int(n_adj));
        const std::string kw = synth::keyword_for_class(cls);
        const auto& t = synth::template_pool()[static_cast<size_t>(tpl)];
        // paired picks, fully determined by question content: the shape word
        // follows the adjective; the material follows template and object
        const auto& shape = shapes[adj_i % shapes.size()];
        const auto& material =
            materials[(static_cast<size_t>(tpl) * objects.size() + obj_i) % materials.size()];

        VqaExample ex;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "%s_%06d", split.c_str(), index);
        ex.example_id = idbuf;
        ex.image_id = "img_" + ex.example_id;
        ex.question =
            synth::fill_template(t.question, adjectives[adj_i], objects[obj_i], shape, material, kw);
        ex.answer =
            synth::fill_template(t.answer, adjectives[adj_i], objects[obj_i], shape, material, kw);
        ex.keyword = kw;
        ex.question_type = derive_question_type(ex.question);

        std::vector<double> feature = prototypes[static_cast<size_t>(cls)];
        for (auto& v : feature) v += rng.normal(0.0, spec.noise_std);
        data.features.emplace_back(ex.image_id, std::move(feature));

        // generator self-checks: keyword exactly once, >= 2 new content words
        const auto answer_tokens = tokenize(ex.answer);
        const auto question_tokens = tokenize(ex.question);
        int kw_count = 0;
        int novel = 0;
        for (const auto& tok : answer_tokens) {
            if (tok == kw) ++kw_count;
            bool in_question = false;
            for (const auto& qt : question_tokens) in_question = in_question || qt == tok;
            if (!in_question) ++novel;
        }
        if (kw_count != 1 || novel < 2) {
            throw ValidationError("synthetic generator: template invariant violated for " +
                                  ex.example_id);
        }
        return ex;
    };

    for (int i = 0; i < spec.n_train; ++i) data.train.push_back(make_example("train", i));
    for (int i = 0; i < spec.n_val; ++i) data.val.push_back(make_example("val", i));
    return data;
}

inline void write_synthetic(const SyntheticDataset& data, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const auto dir = std::filesystem::path(out_dir);
    write_dataset((dir / "train.jsonl").string(), data.train);
    write_dataset((dir / "val.jsonl").string(), data.val);
    ImageFeatureStore::write((dir / "features.bin").string(), (dir / "features.idx").string(),
                             data.features);
}

}  // namespace keyex

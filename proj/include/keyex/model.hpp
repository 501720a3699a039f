#pragma once

// The keyword-extraction network: a frozen encoder producing a joint
// image+question feature, two attention scoring modules over the answer
// tokens (keyword side and question side), an LSTM decoder reconstructing the
// full answer from both outputs, and two bag-of-words decoders that force the
// keyword/question information apart. Training uses a temperature softmax
// over the keyword scores; inference takes the raw-score argmax.

#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "keyex/checkpoint.hpp"
#include "keyex/data.hpp"
#include "keyex/nn.hpp"
#include "keyex/rng.hpp"
#include "keyex/tensor.hpp"
#include "keyex/text.hpp"

namespace keyex {

enum class Ablation { none, no_dq, no_da_dq, lstm_disc };

inline const char* ablation_name(Ablation a) {
    switch (a) {
        case Ablation::none: return "none";
        case Ablation::no_dq: return "no_dq";
        case Ablation::no_da_dq: return "no_da_dq";
        case Ablation::lstm_disc: return "lstm_disc";
    }
    return "none";
}

inline Ablation parse_ablation(const std::string& name) {
    if (name == "none" || name.empty()) return Ablation::none;
    if (name == "no_dq") return Ablation::no_dq;
    if (name == "no_da_dq") return Ablation::no_da_dq;
    if (name == "lstm_disc") return Ablation::lstm_disc;
    throw ConfigError("unknown ablation: " + name +
                      " (expected none|no_dq|no_da_dq|lstm_disc)");
}

struct ModelConfig {
    int d_img = 2048;
    int d_e = 300;
    int attn_hidden = 512;
    int lstm_hidden = 1024;
    int decoder_input_dim = 0;  // 0 means d_e
    int max_len = 32;
    double lambda_all = 1.0;
    double lambda_a = 1.0;
    double lambda_q = 1.0;
    double word_dropout = 0.25;
    Ablation ablation = Ablation::none;

    int input_dim() const { return decoder_input_dim > 0 ? decoder_input_dim : d_e; }

    void validate() const {
        if (d_img <= 0 || d_e <= 0 || attn_hidden <= 0 || lstm_hidden <= 0 || max_len <= 0) {
            throw ConfigError("model config: dimensions must be positive");
        }
        if (lambda_all < 0 || lambda_a < 0 || lambda_q < 0) {
            throw ConfigError("model config: loss weights must be >= 0");
        }
        if (lambda_all == 0 && lambda_a == 0 && lambda_q == 0) {
            throw ConfigError("model config: at least one loss weight must be positive");
        }
        if (word_dropout < 0 || word_dropout > 1) {
            throw ConfigError("model config: word_dropout must be in [0, 1]");
        }
    }
};

// One attention scoring module: query from the joint feature, keys/values
// from the answer rows, then an output projection with layer norm.
struct AttnParams {
    Tensor w_query, b_query;  // [h × d_j], [h]
    Tensor w_key, b_key;      // [h × d_e], [h]
    Tensor w_value, b_value;  // [h × d_e], [h]
    Tensor w_out, b_out;      // [d_e × h], [d_e]
    Tensor ln_gain, ln_bias;  // [d_e]
};

// Conditioned LSTM sequence decoder. The first step consumes a projection of
// the conditioning vector alone; later steps re-project the conditioning
// vector concatenated with the embedded previous target token.
struct SeqDecoderParams {
    Tensor w_first;  // [input_dim × cond_dim]
    Tensor w_step;   // [input_dim × (cond_dim + emb_dim)]
    LstmParams lstm;
    Tensor w_out, b_out;  // [vocab × hidden], [vocab]
};

struct ModelParams {
    ModelConfig config;
    int n_answer_vocab = 0;
    int n_question_vocab = 0;

    Tensor answer_embedding;  // [n_a × d_e], trainable, shared by both scorers and decoders
    Tensor positional;        // [max_len × d_e], trainable
    AttnParams keyword_attn;  // scores answer-importance (keyword side)
    AttnParams question_attn; // scores question-relatedness
    SeqDecoderParams sentence_decoder;  // reconstructs the full answer
    Tensor answer_bow_weight, answer_bow_bias;      // logits over n_a from [f_k; f_Q]
    Tensor question_bow_weight, question_bow_bias;  // logits over n_q from [f_q; f_I]

    // lstm_disc variant only
    Tensor question_dec_embedding;  // [n_q × d_e]
    SeqDecoderParams disc_answer_decoder;
    SeqDecoderParams disc_question_decoder;

    // frozen encoder-side question embedding table
    Tensor encoder_question_embedding;  // [n_q × d_e], requires_grad = false

    // Initialization draws from rng in a fixed order: answer embedding is
    // copied from the provided table, then positional, keyword module,
    // question module, sentence decoder, bag-of-words decoders, and last the
    // lstm_disc extras when enabled.
    static ModelParams init(const ModelConfig& config, const EmbeddingTable& answer_table,
                            const EmbeddingTable& question_table, Rng& rng) {
        config.validate();
        ModelParams m;
        m.config = config;
        m.n_answer_vocab = answer_table.matrix.rows();
        m.n_question_vocab = question_table.matrix.rows();
        if (answer_table.dim != config.d_e || question_table.dim != config.d_e) {
            throw DimensionError("model init: embedding dim does not match d_e");
        }

        m.answer_embedding = answer_table.matrix.clone();
        m.answer_embedding.set_requires_grad(true);
        m.positional = Tensor::zeros({config.max_len, config.d_e}, true);
        for (auto& v : m.positional.values()) v = rng.uniform(-0.1, 0.1);

        m.keyword_attn = init_attn(config, rng);
        m.question_attn = init_attn(config, rng);
        m.sentence_decoder =
            init_seq_decoder(config, 2 * config.d_e, m.n_answer_vocab, rng);

        const int bow_a_in = 2 * config.d_e;            // [f_k; f_Q]
        const int bow_q_in = config.d_e + config.d_img;  // [f_q; f_I]
        m.answer_bow_weight = init_linear_weight(m.n_answer_vocab, bow_a_in, rng);
        m.answer_bow_bias = init_linear_bias(m.n_answer_vocab, bow_a_in, rng);
        m.question_bow_weight = init_linear_weight(m.n_question_vocab, bow_q_in, rng);
        m.question_bow_bias = init_linear_bias(m.n_question_vocab, bow_q_in, rng);

        if (config.ablation == Ablation::lstm_disc) {
            m.question_dec_embedding = Tensor::zeros({m.n_question_vocab, config.d_e}, true);
            for (auto& v : m.question_dec_embedding.values()) v = rng.uniform(-0.1, 0.1);
            m.disc_answer_decoder =
                init_seq_decoder(config, 2 * config.d_e, m.n_answer_vocab, rng);
            m.disc_question_decoder =
                init_seq_decoder(config, config.d_e + config.d_img, m.n_question_vocab, rng);
        }

        m.encoder_question_embedding = question_table.matrix.clone();
        m.encoder_question_embedding.set_requires_grad(false);
        return m;
    }

    std::vector<Tensor> trainable() const {
        std::vector<Tensor> out{answer_embedding, positional};
        append_attn(out, keyword_attn);
        append_attn(out, question_attn);
        append_decoder(out, sentence_decoder);
        out.insert(out.end(), {answer_bow_weight, answer_bow_bias, question_bow_weight,
                               question_bow_bias});
        if (config.ablation == Ablation::lstm_disc) {
            out.push_back(question_dec_embedding);
            append_decoder(out, disc_answer_decoder);
            append_decoder(out, disc_question_decoder);
        }
        return out;
    }

    checkpoint::NamedTensors named_all() const {
        checkpoint::NamedTensors out;
        out.emplace_back("answer_embedding", answer_embedding);
        out.emplace_back("positional", positional);
        name_attn(out, "keyword_attn", keyword_attn);
        name_attn(out, "question_attn", question_attn);
        name_decoder(out, "sentence_decoder", sentence_decoder);
        out.emplace_back("answer_bow.weight", answer_bow_weight);
        out.emplace_back("answer_bow.bias", answer_bow_bias);
        out.emplace_back("question_bow.weight", question_bow_weight);
        out.emplace_back("question_bow.bias", question_bow_bias);
        if (config.ablation == Ablation::lstm_disc) {
            out.emplace_back("question_dec_embedding", question_dec_embedding);
            name_decoder(out, "disc_answer_decoder", disc_answer_decoder);
            name_decoder(out, "disc_question_decoder", disc_question_decoder);
        }
        out.emplace_back("encoder_question_embedding", encoder_question_embedding);
        return out;
    }

    static ModelParams from_named(const ModelConfig& config,
                                  const checkpoint::NamedTensors& entries) {
        config.validate();
        std::unordered_map<std::string, Tensor> map;
        for (const auto& [name, t] : entries) map.emplace(name, t);
        auto take = [&map](const std::string& name, bool trainable) {
            auto it = map.find(name);
            if (it == map.end()) throw ValidationError("checkpoint: missing tensor " + name);
            Tensor t = it->second.clone();
            t.set_requires_grad(trainable);
            return t;
        };
        ModelParams m;
        m.config = config;
        m.answer_embedding = take("answer_embedding", true);
        m.positional = take("positional", true);
        m.n_answer_vocab = m.answer_embedding.rows();
        load_attn(m.keyword_attn, "keyword_attn", take);
        load_attn(m.question_attn, "question_attn", take);
        load_decoder(m.sentence_decoder, "sentence_decoder", take, config);
        m.answer_bow_weight = take("answer_bow.weight", true);
        m.answer_bow_bias = take("answer_bow.bias", true);
        m.question_bow_weight = take("question_bow.weight", true);
        m.question_bow_bias = take("question_bow.bias", true);
        if (config.ablation == Ablation::lstm_disc) {
            m.question_dec_embedding = take("question_dec_embedding", true);
            load_decoder(m.disc_answer_decoder, "disc_answer_decoder", take, config);
            load_decoder(m.disc_question_decoder, "disc_question_decoder", take, config);
        }
        m.encoder_question_embedding = take("encoder_question_embedding", false);
        m.n_question_vocab = m.encoder_question_embedding.rows();
        if (m.answer_embedding.cols() != config.d_e) {
            throw ValidationError("checkpoint: embedding dim does not match config d_e");
        }
        return m;
    }

    ModelParams deep_copy() const {
        return from_named(config, named_all());
    }

  private:
    static AttnParams init_attn(const ModelConfig& c, Rng& rng) {
        const int d_j = c.d_img + c.d_e;
        AttnParams p;
        p.w_query = init_linear_weight(c.attn_hidden, d_j, rng);
        p.b_query = init_linear_bias(c.attn_hidden, d_j, rng);
        p.w_key = init_linear_weight(c.attn_hidden, c.d_e, rng);
        p.b_key = init_linear_bias(c.attn_hidden, c.d_e, rng);
        p.w_value = init_linear_weight(c.attn_hidden, c.d_e, rng);
        p.b_value = init_linear_bias(c.attn_hidden, c.d_e, rng);
        p.w_out = init_linear_weight(c.d_e, c.attn_hidden, rng);
        p.b_out = init_linear_bias(c.d_e, c.attn_hidden, rng);
        p.ln_gain = Tensor::full({c.d_e}, 1.0, true);
        p.ln_bias = Tensor::zeros({c.d_e}, true);
        return p;
    }

    static SeqDecoderParams init_seq_decoder(const ModelConfig& c, int cond_dim, int vocab,
                                             Rng& rng) {
        SeqDecoderParams p;
        const int in = c.input_dim();
        p.w_first = init_linear_weight(in, cond_dim, rng);
        p.w_step = init_linear_weight(in, cond_dim + c.d_e, rng);
        p.lstm = init_lstm(in, c.lstm_hidden, rng);
        p.w_out = init_linear_weight(vocab, c.lstm_hidden, rng);
        p.b_out = init_linear_bias(vocab, c.lstm_hidden, rng);
        return p;
    }

    static void append_attn(std::vector<Tensor>& out, const AttnParams& p) {
        out.insert(out.end(), {p.w_query, p.b_query, p.w_key, p.b_key, p.w_value, p.b_value,
                               p.w_out, p.b_out, p.ln_gain, p.ln_bias});
    }

    static void append_decoder(std::vector<Tensor>& out, const SeqDecoderParams& p) {
        out.insert(out.end(),
                   {p.w_first, p.w_step, p.lstm.w_ih, p.lstm.w_hh, p.lstm.b, p.w_out, p.b_out});
    }

    static void name_attn(checkpoint::NamedTensors& out, const std::string& prefix,
                          const AttnParams& p) {
        out.emplace_back(prefix + ".w_query", p.w_query);
        out.emplace_back(prefix + ".b_query", p.b_query);
        out.emplace_back(prefix + ".w_key", p.w_key);
        out.emplace_back(prefix + ".b_key", p.b_key);
        out.emplace_back(prefix + ".w_value", p.w_value);
        out.emplace_back(prefix + ".b_value", p.b_value);
        out.emplace_back(prefix + ".w_out", p.w_out);
        out.emplace_back(prefix + ".b_out", p.b_out);
        out.emplace_back(prefix + ".ln_gain", p.ln_gain);
        out.emplace_back(prefix + ".ln_bias", p.ln_bias);
    }

    static void name_decoder(checkpoint::NamedTensors& out, const std::string& prefix,
                             const SeqDecoderParams& p) {
        out.emplace_back(prefix + ".w_first", p.w_first);
        out.emplace_back(prefix + ".w_step", p.w_step);
        out.emplace_back(prefix + ".lstm.w_ih", p.lstm.w_ih);
        out.emplace_back(prefix + ".lstm.w_hh", p.lstm.w_hh);
        out.emplace_back(prefix + ".lstm.b", p.lstm.b);
        out.emplace_back(prefix + ".w_out", p.w_out);
        out.emplace_back(prefix + ".b_out", p.b_out);
    }

    template <typename Take>
    static void load_attn(AttnParams& p, const std::string& prefix, Take&& take) {
        p.w_query = take(prefix + ".w_query", true);
        p.b_query = take(prefix + ".b_query", true);
        p.w_key = take(prefix + ".w_key", true);
        p.b_key = take(prefix + ".b_key", true);
        p.w_value = take(prefix + ".w_value", true);
        p.b_value = take(prefix + ".b_value", true);
        p.w_out = take(prefix + ".w_out", true);
        p.b_out = take(prefix + ".b_out", true);
        p.ln_gain = take(prefix + ".ln_gain", true);
        p.ln_bias = take(prefix + ".ln_bias", true);
    }

    template <typename Take>
    static void load_decoder(SeqDecoderParams& p, const std::string& prefix, Take&& take,
                             const ModelConfig& c) {
        p.w_first = take(prefix + ".w_first", true);
        p.w_step = take(prefix + ".w_step", true);
        p.lstm.w_ih = take(prefix + ".lstm.w_ih", true);
        p.lstm.w_hh = take(prefix + ".lstm.w_hh", true);
        p.lstm.b = take(prefix + ".lstm.b", true);
        p.lstm.input_dim = c.input_dim();
        p.lstm.hidden_dim = c.lstm_hidden;
        p.w_out = take(prefix + ".w_out", true);
        p.b_out = take(prefix + ".b_out", true);
    }
};

// ---------------------------------------------------------------------------
// Encoder (frozen)
// ---------------------------------------------------------------------------

struct EncoderOutput {
    Tensor image_vec;     // l2-normalized image feature
    Tensor question_vec;  // l2-normalized mean question-word embedding
    Tensor joint_vec;     // [image_vec ; question_vec]
};

// No gradients flow here: the image feature is an input and the question
// embedding table is pretrained and frozen.
inline EncoderOutput encode(std::span<const double> image_feature,
                            std::span<const std::string> question_tokens,
                            const Tensor& question_embedding, const Vocabulary& question_vocab) {
    if (question_tokens.empty()) throw ValidationError("encode: empty question");
    if (image_feature.empty()) throw ValidationError("encode: empty image feature");
    NoGradGuard guard;

    Tensor image = Tensor::of({static_cast<int>(image_feature.size())},
                              {image_feature.begin(), image_feature.end()});
    EncoderOutput out;
    out.image_vec = l2_normalize(image);

    const int d_e = question_embedding.cols();
    Tensor mean = Tensor::zeros({d_e});
    for (const auto& tok : question_tokens) {
        const int id = question_vocab.id_of(tok);
        for (int j = 0; j < d_e; ++j) mean.at(j) += question_embedding.at2(id, j);
    }
    for (int j = 0; j < d_e; ++j) mean.at(j) /= static_cast<double>(question_tokens.size());
    out.question_vec = l2_normalize(mean);
    out.joint_vec = concat(out.image_vec, out.question_vec);
    return out;
}

// ---------------------------------------------------------------------------
// Per-example preprocessed inputs
// ---------------------------------------------------------------------------

struct EncodedExample {
    std::string example_id;
    std::string question_type;
    std::vector<std::string> answer_tokens;  // truncated to max_len
    std::vector<int> answer_ids;
    std::vector<int> question_ids;
    std::vector<std::string> keyword_tokens;  // empty when no gold keyword
    EncoderOutput encoder;
    Tensor answer_bow;    // over answer vocab
    Tensor question_bow;  // over question vocab
};

inline EncodedExample encode_example(const VqaExample& ex, const ImageFeatureStore& features,
                                     const Vocabulary& answer_vocab,
                                     const Vocabulary& question_vocab, const ModelParams& params,
                                     std::vector<std::string>* warnings = nullptr) {
    EncodedExample enc;
    enc.example_id = ex.example_id;
    enc.question_type =
        ex.question_type.empty() ? derive_question_type(ex.question) : ex.question_type;
    enc.answer_tokens = tokenize(ex.answer);
    if (enc.answer_tokens.empty()) throw ValidationError("encode_example: empty answer");
    const auto question_tokens = tokenize(ex.question);
    if (question_tokens.empty()) throw ValidationError("encode_example: empty question");

    if (static_cast<int>(enc.answer_tokens.size()) > params.config.max_len) {
        if (warnings) {
            warnings->push_back("answer of " + ex.example_id + " truncated to max_len=" +
                                std::to_string(params.config.max_len));
        }
        enc.answer_tokens.resize(static_cast<size_t>(params.config.max_len));
    }
    enc.answer_ids = answer_vocab.encode(enc.answer_tokens);
    enc.question_ids = question_vocab.encode(question_tokens);
    if (ex.has_keyword()) enc.keyword_tokens = tokenize(ex.keyword);
    enc.encoder = encode(features.get(ex.image_id), question_tokens,
                         params.encoder_question_embedding, question_vocab);
    enc.answer_bow = bow_feature(enc.answer_tokens, answer_vocab);
    enc.question_bow = bow_feature(question_tokens, question_vocab);
    return enc;
}

// ---------------------------------------------------------------------------
// Attention scoring
// ---------------------------------------------------------------------------

struct AttentionForward {
    Tensor scores;  // raw [n]
    Tensor values;  // [n × h]
};

// query = W_q·joint + b; keys/values per answer row; scores = keys · query.
// No 1/sqrt(h) scaling on the scores.
inline AttentionForward attention_score(const AttnParams& p, const Tensor& joint_vec,
                                        const Tensor& answer_rows) {
    AttentionForward out;
    Tensor query = linear(joint_vec, p.w_query, p.b_query);
    Tensor keys = rows_linear(answer_rows, p.w_key, p.b_key);
    out.values = rows_linear(answer_rows, p.w_value, p.b_value);
    out.scores = matvec(keys, query);
    return out;
}

// Differentiable stand-in for picking the best-scored value row.
inline Tensor select_keyword_soft(const Tensor& scores, const Tensor& values, double tau) {
    return weighted_row_sum(values, softmax_temp(scores, tau));
}

// Question information needs no sharpening; plain softmax weighting.
inline Tensor question_vector(const Tensor& scores, const Tensor& values) {
    return weighted_row_sum(values, softmax(scores));
}

inline Tensor project_output(const AttnParams& p, const Tensor& raw) {
    return layer_norm(linear(raw, p.w_out, p.b_out), p.ln_gain, p.ln_bias);
}

// Embedded answer tokens plus learned positional rows; shared by both
// scoring modules.
inline Tensor answer_feature_rows(const ModelParams& m, std::span<const int> answer_ids) {
    return add_position_rows(pick_rows(m.answer_embedding, answer_ids), m.positional);
}

inline int argmax_lowest(std::span<const double> scores) {
    int best = 0;
    for (size_t i = 1; i < scores.size(); ++i) {
        if (scores[i] > scores[static_cast<size_t>(best)]) best = static_cast<int>(i);
    }
    return best;
}

struct AttentionOutcome {
    Tensor keyword_scores;    // raw, keyword side
    Tensor question_scores;   // raw, question side
    Tensor keyword_probs;     // softmax(keyword_scores / tau)
    Tensor question_probs;    // softmax(question_scores)
    Tensor keyword_vec;       // projected f_k
    Tensor question_info_vec; // projected f_q
    int keyword_index = 0;    // argmax over raw keyword scores, lowest index on ties
};

inline AttentionOutcome attention_outcome(const ModelParams& m, const Tensor& joint_vec,
                                          const Tensor& answer_rows, double tau) {
    AttentionOutcome out;
    AttentionForward key_side = attention_score(m.keyword_attn, joint_vec, answer_rows);
    AttentionForward question_side = attention_score(m.question_attn, joint_vec, answer_rows);
    out.keyword_scores = key_side.scores;
    out.question_scores = question_side.scores;
    out.keyword_probs = softmax_temp(key_side.scores, tau);
    out.question_probs = softmax(question_side.scores);
    out.keyword_vec =
        project_output(m.keyword_attn, weighted_row_sum(key_side.values, out.keyword_probs));
    out.question_info_vec =
        project_output(m.question_attn, weighted_row_sum(question_side.values, out.question_probs));
    out.keyword_index = argmax_lowest(key_side.scores.values());
    return out;
}

// ---------------------------------------------------------------------------
// Decoders
// ---------------------------------------------------------------------------

// Teacher-forced reconstruction of target_ids followed by <eos>. Step one
// consumes a projection of cond alone; step t re-projects cond with the
// embedded previous target token, which is replaced by <mask> with
// probability word_dropout. Returns the summed token cross-entropy.
inline Tensor sequence_reconstruction_loss(const SeqDecoderParams& p, const Tensor& cond,
                                           std::span<const int> target_ids,
                                           const Tensor& embedding, double word_dropout,
                                           Rng& rng, int* masked_inputs = nullptr) {
    if (target_ids.empty()) {
        throw ValidationError("sequence_reconstruction_loss: empty target");
    }
    const int steps = static_cast<int>(target_ids.size()) + 1;  // targets + <eos>
    LstmState state = lstm_initial_state(p.lstm.hidden_dim);
    Tensor x = matvec(p.w_first, cond);
    Tensor loss = Tensor::scalar(0.0);
    for (int t = 0; t < steps; ++t) {
        state = lstm_cell_step(x, state, p.lstm);
        const int target =
            t < static_cast<int>(target_ids.size()) ? target_ids[static_cast<size_t>(t)]
                                                    : Vocabulary::kEos;
        loss = add(loss, cross_entropy_onehot(linear(state.h, p.w_out, p.b_out), target));
        if (t + 1 < steps) {
            int prev = target_ids[static_cast<size_t>(t)];
            if (rng.uniform01() < word_dropout) {
                prev = Vocabulary::kMask;
                if (masked_inputs) ++(*masked_inputs);
            }
            x = matvec(p.w_step, concat(cond, pick_row(embedding, prev)));
        }
    }
    return loss;
}

inline Tensor entire_decoder_loss(const ModelParams& m, const Tensor& keyword_vec,
                                  const Tensor& question_info_vec,
                                  std::span<const int> answer_ids, double word_dropout,
                                  Rng& rng, int* masked_inputs = nullptr) {
    return sequence_reconstruction_loss(m.sentence_decoder, concat(keyword_vec, question_info_vec),
                                        answer_ids, m.answer_embedding, word_dropout, rng,
                                        masked_inputs);
}

// Bag-of-words reconstruction (or LSTM reconstruction under the lstm_disc
// switch). Decoders disabled by an ablation switch or a zero loss weight
// contribute an exact zero with no parameter gradients.
inline std::pair<Tensor, Tensor> discriminative_losses(const ModelParams& m,
                                                       const Tensor& keyword_vec,
                                                       const Tensor& question_info_vec,
                                                       const EncodedExample& ex, Rng& rng) {
    const Ablation ablation = m.config.ablation;
    const bool want_answer = m.config.lambda_a > 0 && ablation != Ablation::no_da_dq;
    const bool want_question = m.config.lambda_q > 0 && ablation != Ablation::no_da_dq &&
                               ablation != Ablation::no_dq;
    Tensor answer_loss = Tensor::scalar(0.0);
    Tensor question_loss = Tensor::scalar(0.0);
    if (ablation == Ablation::lstm_disc) {
        if (want_answer) {
            answer_loss = sequence_reconstruction_loss(
                m.disc_answer_decoder, concat(keyword_vec, ex.encoder.question_vec),
                ex.answer_ids, m.answer_embedding, m.config.word_dropout, rng);
        }
        if (want_question) {
            question_loss = sequence_reconstruction_loss(
                m.disc_question_decoder, concat(question_info_vec, ex.encoder.image_vec),
                ex.question_ids, m.question_dec_embedding, m.config.word_dropout, rng);
        }
        return {answer_loss, question_loss};
    }
    if (want_answer) {
        Tensor answer_logits = linear(concat(keyword_vec, ex.encoder.question_vec),
                                      m.answer_bow_weight, m.answer_bow_bias);
        answer_loss = cross_entropy(answer_logits, ex.answer_bow);
    }
    if (want_question) {
        Tensor question_logits = linear(concat(question_info_vec, ex.encoder.image_vec),
                                        m.question_bow_weight, m.question_bow_bias);
        question_loss = cross_entropy(question_logits, ex.question_bow);
    }
    return {answer_loss, question_loss};
}

// ---------------------------------------------------------------------------
// Combined objective
// ---------------------------------------------------------------------------

struct LossBreakdown {
    double entire = 0.0;        // sentence reconstruction
    double answer_bow = 0.0;    // keyword-side discriminative loss
    double question_bow = 0.0;  // question-side discriminative loss
    double lambda_all = 1.0;
    double lambda_a = 1.0;
    double lambda_q = 1.0;

    double total() const {
        return lambda_all * entire + lambda_a * answer_bow + lambda_q * question_bow;
    }
};

inline double total_loss(const LossBreakdown& parts) {
    if (parts.lambda_all < 0 || parts.lambda_a < 0 || parts.lambda_q < 0) {
        throw ConfigError("total_loss: loss weights must be >= 0");
    }
    return parts.total();
}

struct ExampleLoss {
    Tensor graph;  // weighted total on the tape
    LossBreakdown parts;
    int predicted_tokens = 0;  // answer length + <eos>
    int masked_inputs = 0;
};

inline ExampleLoss model_loss(const ModelParams& m, const EncodedExample& ex, double tau,
                              Rng& rng) {
    Tensor answer_rows = answer_feature_rows(m, ex.answer_ids);
    AttentionForward key_side = attention_score(m.keyword_attn, ex.encoder.joint_vec, answer_rows);
    AttentionForward q_side = attention_score(m.question_attn, ex.encoder.joint_vec, answer_rows);
    Tensor keyword_vec =
        project_output(m.keyword_attn, select_keyword_soft(key_side.scores, key_side.values, tau));
    Tensor question_info_vec =
        project_output(m.question_attn, question_vector(q_side.scores, q_side.values));

    ExampleLoss out;
    Tensor entire = m.config.lambda_all > 0
                        ? entire_decoder_loss(m, keyword_vec, question_info_vec, ex.answer_ids,
                                              m.config.word_dropout, rng, &out.masked_inputs)
                        : Tensor::scalar(0.0);
    auto [answer_loss, question_loss] =
        discriminative_losses(m, keyword_vec, question_info_vec, ex, rng);

    out.parts.entire = entire.value();
    out.parts.answer_bow = answer_loss.value();
    out.parts.question_bow = question_loss.value();
    out.parts.lambda_all = m.config.lambda_all;
    out.parts.lambda_a = m.config.lambda_a;
    out.parts.lambda_q = m.config.lambda_q;
    out.predicted_tokens = static_cast<int>(ex.answer_ids.size()) + 1;
    out.graph = add(add(scale(entire, m.config.lambda_all), scale(answer_loss, m.config.lambda_a)),
                    scale(question_loss, m.config.lambda_q));
    return out;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

struct KeywordExtraction {
    std::string token;
    int index = 0;
    std::vector<double> scores;  // raw keyword-side scores per answer token
};

// Hard argmax over the raw keyword scores (no temperature); ties resolve to
// the lowest index.
inline KeywordExtraction extract_keyword(const ModelParams& m, const EncodedExample& ex) {
    if (ex.answer_tokens.empty()) throw ValidationError("extract_keyword: empty answer");
    NoGradGuard guard;
    Tensor answer_rows = answer_feature_rows(m, ex.answer_ids);
    AttentionForward key_side = attention_score(m.keyword_attn, ex.encoder.joint_vec, answer_rows);
    KeywordExtraction out;
    out.scores = key_side.scores.values();
    out.index = argmax_lowest(out.scores);
    out.token = ex.answer_tokens[static_cast<size_t>(out.index)];
    return out;
}

}  // namespace keyex

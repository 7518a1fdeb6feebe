#pragma once

// Hierarchical inference network for document-level relation extraction.
//
//   tokens --embed--> X --BiLSTM_E--> H --mention/entity averaging--> E_a, E_b
//   entity level:   K subspace projections, bi-affine + translation blocks,
//                   distance embeddings, FFNN G_e                       -> I_e
//   sentence level: BiLSTM_S + word attention per sentence              -> S_j
//                   G_s([S_j; I_e; S_j - I_e; S_j * I_e])               -> I_sj
//   document level: BiLSTM_D over I_s + sentence attention              -> I_d
//   prediction:     sigmoid(W_r [I_e; I_d] + b_r)
//
// Everything that does not depend on the candidate pair (X, H, S_j) is
// computed once per document and shared by all of its pairs.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "hin/autodiff.hpp"
#include "hin/corpus.hpp"
#include "hin/errors.hpp"
#include "hin/layers.hpp"
#include "hin/params.hpp"
#include "hin/random.hpp"

namespace hin {

struct Ablations {
  bool no_translation = false;
  bool no_bilinear = false;
  bool single_space = false;
  bool no_sentence_inference = false;
  bool flat_document = false;

  bool operator==(const Ablations&) const = default;
};

inline const std::vector<std::string>& ablation_flags() {
  static const std::vector<std::string> kFlags = {"no_translation", "no_bilinear", "single_space",
                                                  "no_sentence_inference", "flat_document"};
  return kFlags;
}

// Sets the named flag; returns false for unknown names.
inline bool set_ablation(Ablations& a, const std::string& flag, bool value = true) {
  if (flag == "no_translation") a.no_translation = value;
  else if (flag == "no_bilinear") a.no_bilinear = value;
  else if (flag == "single_space") a.single_space = value;
  else if (flag == "no_sentence_inference") a.no_sentence_inference = value;
  else if (flag == "flat_document") a.flat_document = value;
  else return false;
  return true;
}

struct ModelConfig {
  std::size_t word_dim = 100;
  std::size_t type_dim = 20;
  std::size_t coref_dim = 20;
  std::size_t distance_dim = 20;
  std::size_t hidden = 128;       // LSTM units per direction; d = 2 * hidden
  std::size_t subspaces = 2;      // K
  std::size_t subspace_dim = 0;   // d_s; 0 selects d / K
  std::size_t relations = 96;     // l
  double dropout = 0.2;
  bool freeze_word_embeddings = true;
  Ablations ablations;

  // Table sizes, normally taken from the vocabulary.
  std::size_t vocab_size = 2;
  std::size_t type_count = 2;
  std::size_t max_entities = 64;

  bool operator==(const ModelConfig&) const = default;

  std::size_t d() const { return 2 * hidden; }
  std::size_t input_dim() const { return word_dim + type_dim + coref_dim; }

  std::size_t effective_subspaces() const { return ablations.single_space ? 1 : subspaces; }

  std::size_t effective_subspace_dim() const {
    if (ablations.single_space) return d();
    return subspace_dim != 0 ? subspace_dim : d() / subspaces;
  }

  // Ablated entity blocks are zero-filled, so G_e's input width does not
  // depend on no_translation / no_bilinear.
  std::size_t entity_block_width() const { return 4 * effective_subspace_dim(); }
  std::size_t entity_ffnn_input() const {
    return effective_subspaces() * entity_block_width() + distance_dim;
  }

  void validate() const {
    auto positive = [](std::size_t v, const char* what) {
      if (v == 0) throw ConfigError(std::string("model config: ") + what + " must be >= 1");
    };
    positive(word_dim, "word_dim");
    positive(type_dim, "type_dim");
    positive(coref_dim, "coref_dim");
    positive(distance_dim, "distance_dim");
    positive(hidden, "hidden");
    positive(subspaces, "subspaces");
    positive(relations, "relations");
    positive(vocab_size, "vocab_size");
    positive(type_count, "type_count");
    positive(max_entities, "max_entities");
    if (effective_subspace_dim() == 0) {
      throw ConfigError("model config: subspace width d / K is zero (d = " + std::to_string(d()) +
                        ", K = " + std::to_string(subspaces) + ")");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
      throw ConfigError("model config: dropout must lie in [0, 1)");
    }
  }
};

inline void to_json(nlohmann::json& j, const Ablations& a) {
  j = {{"no_translation", a.no_translation},
       {"no_bilinear", a.no_bilinear},
       {"single_space", a.single_space},
       {"no_sentence_inference", a.no_sentence_inference},
       {"flat_document", a.flat_document}};
}

inline void from_json(const nlohmann::json& j, Ablations& a) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!set_ablation(a, it.key(), it.value().get<bool>())) {
      throw ConfigError("unknown ablation flag '" + it.key() + "'");
    }
  }
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"word_dim", c.word_dim},
       {"type_dim", c.type_dim},
       {"coref_dim", c.coref_dim},
       {"distance_dim", c.distance_dim},
       {"hidden", c.hidden},
       {"subspaces", c.subspaces},
       {"subspace_dim", c.subspace_dim},
       {"relations", c.relations},
       {"dropout", c.dropout},
       {"freeze_word_embeddings", c.freeze_word_embeddings},
       {"ablations", c.ablations},
       {"vocab_size", c.vocab_size},
       {"type_count", c.type_count},
       {"max_entities", c.max_entities}};
}

// Partial objects are allowed: absent keys keep their current values.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const std::vector<std::string> kKnown = {
      "word_dim", "type_dim", "coref_dim", "distance_dim", "hidden", "subspaces",
      "subspace_dim", "relations", "dropout", "freeze_word_embeddings", "ablations",
      "vocab_size", "type_count", "max_entities"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(kKnown.begin(), kKnown.end(), it.key()) == kKnown.end()) {
      throw ConfigError("unknown model config key '" + it.key() + "'");
    }
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("word_dim", c.word_dim);
  get("type_dim", c.type_dim);
  get("coref_dim", c.coref_dim);
  get("distance_dim", c.distance_dim);
  get("hidden", c.hidden);
  get("subspaces", c.subspaces);
  get("subspace_dim", c.subspace_dim);
  get("relations", c.relations);
  get("dropout", c.dropout);
  get("freeze_word_embeddings", c.freeze_word_embeddings);
  if (j.contains("ablations")) from_json(j.at("ablations"), c.ablations);
  get("vocab_size", c.vocab_size);
  get("type_count", c.type_count);
  get("max_entities", c.max_entities);
}

// ---------------------------------------------------------------------------
// Parameter layout

inline std::string subspace_prefix(std::size_t k) { return "entity.space" + std::to_string(k); }

// Names, shapes and initializers of every parameter, in allocation order.
// Ablated components contribute nothing.
inline Layout param_layout(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d();
  const std::size_t ds = cfg.effective_subspace_dim();
  const Ablations& ab = cfg.ablations;
  Layout out;

  out.push_back({"embed.word", Shape{cfg.vocab_size, cfg.word_dim}, Init::kWordTable, cfg.word_dim,
                 cfg.freeze_word_embeddings});
  embedding_layout(out, "embed.type", cfg.type_count, cfg.type_dim);
  embedding_layout(out, "embed.coref", cfg.max_entities + 1, cfg.coref_dim);
  embedding_layout(out, "embed.distance", kDistanceBuckets, cfg.distance_dim);

  lstm_layout(out, "encoder.lstm", cfg.input_dim(), cfg.hidden);

  for (std::size_t k = 0; k < cfg.effective_subspaces(); ++k) {
    const std::string p = subspace_prefix(k);
    out.push_back({p + ".proj_in", Shape{d, d}, Init::kUniform, d});
    out.push_back({p + ".proj_out", Shape{ds, d}, Init::kUniform, d});
    if (!ab.no_bilinear) biaffine_layout(out, p + ".biaffine", ds);
  }
  ffnn_layout(out, "entity.ffnn", {cfg.entity_ffnn_input(), d, d});

  if (!ab.flat_document) {
    lstm_layout(out, "sentence.lstm", cfg.input_dim(), cfg.hidden);
    attention_layout(out, "sentence.word_attention", d);
    if (!ab.no_sentence_inference) ffnn_layout(out, "sentence.ffnn", {4 * d, d, d});
    lstm_layout(out, "document.lstm", d, cfg.hidden);
    attention_layout(out, "document.sentence_attention", d);
  }

  out.push_back({"output.weight", Shape{cfg.relations, 2 * d}, Init::kUniform, 2 * d});
  out.push_back({"output.bias", Shape{cfg.relations}, Init::kZero, 1});
  return out;
}

// Closed-form parameter-count change caused by switching on `flag` over
// `base` (which must not already have it set).
inline long long expected_parameter_delta(const ModelConfig& base, const std::string& flag) {
  using ll = long long;
  const ll d = static_cast<ll>(base.d());
  const ll K = static_cast<ll>(base.effective_subspaces());
  const ll ds = static_cast<ll>(base.effective_subspace_dim());
  const ll in = static_cast<ll>(base.input_dim());
  const ll h = static_cast<ll>(base.hidden);
  const ll dist = static_cast<ll>(base.distance_dim);
  const ll lstm_in_input = 2 * (4 * h * in + 4 * h * h + 4 * h);
  const ll lstm_d_input = 2 * (4 * h * d + 4 * h * h + 4 * h);
  const ll attention = d + d * d + d;
  const ll gs = (4 * d * d + d) + (d * d + d);
  if (flag == "no_bilinear") return base.ablations.no_bilinear ? 0 : -K * ds * ds * ds;
  if (flag == "no_translation") return 0;
  if (flag == "single_space") {
    if (base.ablations.single_space) return 0;
    const ll projections = (d * d + d * d) - K * (d * d + d * ds);
    const ll bilinear = base.ablations.no_bilinear ? 0 : d * d * d - K * ds * ds * ds;
    const ll ge_first = d * (4 * d + dist) - d * (K * 4 * ds + dist);
    return projections + bilinear + ge_first;
  }
  if (flag == "no_sentence_inference") {
    if (base.ablations.no_sentence_inference || base.ablations.flat_document) return 0;
    return -gs;
  }
  if (flag == "flat_document") {
    if (base.ablations.flat_document) return 0;
    const ll sentence_ffnn = base.ablations.no_sentence_inference ? 0 : gs;
    return -(lstm_in_input + attention + sentence_ffnn + lstm_d_input + attention);
  }
  throw ConfigError("unknown ablation flag '" + flag + "'");
}

// ---------------------------------------------------------------------------
// Forward-pass records

struct DocumentEncoding {
  Var embeddings;                     // X [n x (d_w + d_t + d_c)]
  Var token_states;                   // H [n x d]
  std::vector<Var> sentence_states;   // per sentence [T_j x d]
  std::vector<Var> word_weights;      // per sentence [T_j]
  std::optional<Var> sentence_vectors;  // S [L x d]
  std::optional<Var> document_mean;     // flat_document: mean over H
  std::size_t tokens = 0;
  std::size_t sentences = 0;
};

struct EntityInference {
  Var blocks;  // [I_e^1; ...; I_e^K; M(d_ba) - M(d_ab)], input of G_e
  Var result;  // I_e [d]
  std::vector<Var> head_projections;  // E_a^k
  std::vector<Var> tail_projections;  // E_b^k
};

struct SentenceInference {
  Var vectors;                 // I_s [L x d]
  std::optional<Var> matching;  // G_s input [L x 4d]
};

struct DocumentInference {
  Var vector;   // I_d [d]
  std::optional<Var> weights;  // a_j [L]; absent for flat_document
  std::optional<Var> states;   // c_sj [L x d]
};

struct PairForward {
  EntityInference entity;
  std::optional<SentenceInference> sentence;
  DocumentInference document;
  Var probabilities;  // [l]
};

// ---------------------------------------------------------------------------

class HinModel {
 public:
  // `pretrained` rows (aligned to word ids) replace the initializer where
  // `from_pretrained[id]` is set.
  HinModel(ModelConfig cfg, std::uint64_t seed, const Tensor* pretrained = nullptr,
           const std::vector<bool>* from_pretrained = nullptr)
      : cfg_(std::move(cfg)) {
    SeedStream rng = SeedStream::derive(seed, "init");
    allocate(params_, param_layout(cfg_), rng);
    if (pretrained) {
      Tensor& table = params_.at("embed.word").value;
      if (pretrained->shape() != table.shape()) {
        throw ConfigError("pretrained table " + shape_str(pretrained->shape()) +
                          " does not match word embedding " + shape_str(table.shape()));
      }
      const std::size_t dim = cfg_.word_dim;
      for (std::size_t id = 0; id < cfg_.vocab_size; ++id) {
        if (from_pretrained && (id >= from_pretrained->size() || !(*from_pretrained)[id])) continue;
        std::copy_n(pretrained->data().begin() + id * dim, dim, table.data().begin() + id * dim);
      }
    }
    bind();
  }

  HinModel(const HinModel&) = delete;
  HinModel& operator=(const HinModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // Input layer: concat(word, type, coreference) embeddings per token, with
  // dropout in training mode.
  Var embed_input(const Context& ctx, const DocumentInputs& in) const {
    if (in.tokens() == 0) throw DimensionError("embed_input: document has no tokens");
    Var words = embedding_lookup(ctx, word_, in.words);
    Var types = embedding_lookup(ctx, type_, in.types);
    Var corefs = embedding_lookup(ctx, coref_, in.corefs);
    return dropout_apply(ctx, ad::concat({words, types, corefs}), cfg_.dropout);
  }

  DocumentEncoding encode(const Context& ctx, const DocumentInputs& in) const {
    DocumentEncoding enc;
    enc.tokens = in.tokens();
    enc.sentences = in.sentences();
    if (enc.sentences == 0) throw DimensionError("encode: document has no sentences");
    enc.embeddings = embed_input(ctx, in);
    enc.token_states = bilstm_forward(ctx, enc.embeddings, encoder_lstm_);
    if (cfg_.ablations.flat_document) {
      enc.document_mean = ad::mean_rows(enc.token_states);
      return enc;
    }
    std::vector<Var> pooled;
    for (std::size_t j = 0; j < enc.sentences; ++j) {
      if (in.sentence_lengths[j] == 0) throw DimensionError("encode: empty sentence " + std::to_string(j));
      Var words = ad::slice_rows(enc.embeddings, in.sentence_starts[j], in.sentence_lengths[j]);
      Var states = bilstm_forward(ctx, words, sentence_lstm_);
      AttentionResult att = additive_attention_pool(ctx, states, word_attention_);
      enc.sentence_states.push_back(states);
      enc.word_weights.push_back(att.weights);
      pooled.push_back(att.pooled);
    }
    enc.sentence_vectors = ad::stack_rows(pooled);
    return enc;
  }

  // Mean over mentions of the mean over each mention's token states.
  Var entity_representation(const DocumentEncoding& enc, const std::vector<ad::RowSpan>& mentions) const {
    if (mentions.empty()) throw IngestionError("entity_representation: entity has no mentions");
    return ad::span_average(enc.token_states, mentions);
  }

  EntityInference entity_inference(const Context& ctx, Var head, Var tail, std::size_t head_start,
                                   std::size_t tail_start) const {
    const Ablations& ab = cfg_.ablations;
    const std::size_t ds = cfg_.effective_subspace_dim();
    EntityInference out;
    std::vector<Var> parts;
    for (const Subspace& space : subspaces_) {
      Var w_in = ctx.bind(*space.proj_in);
      Var w_out = ctx.bind(*space.proj_out);
      Var a = ad::matvec(w_out, ad::relu(ad::matvec(w_in, head)));
      Var b = ad::matvec(w_out, ad::relu(ad::matvec(w_in, tail)));
      out.head_projections.push_back(a);
      out.tail_projections.push_back(b);
      parts.push_back(ab.no_bilinear ? zeros(ctx, ds) : biaffine(ctx, a, b, *space.biaffine));
      parts.push_back(ab.no_translation ? zeros(ctx, ds) : ad::sub(b, a));
      parts.push_back(a);
      parts.push_back(b);
    }
    const long long d_ab = static_cast<long long>(head_start) - static_cast<long long>(tail_start);
    Var m_ba = embedding_row(ctx, distance_, distance_index(distance_bucket(-d_ab)));
    Var m_ab = embedding_row(ctx, distance_, distance_index(distance_bucket(d_ab)));
    parts.push_back(ad::sub(m_ba, m_ab));
    out.blocks = ad::concat(parts);
    out.result = ffnn_relu(ctx, out.blocks, entity_ffnn_, cfg_.dropout);
    return out;
  }

  SentenceInference sentence_inference(const Context& ctx, const DocumentEncoding& enc, Var ie) const {
    if (!enc.sentence_vectors) {
      throw ConfigError("sentence_inference: unavailable with flat_document");
    }
    Var s = *enc.sentence_vectors;
    if (cfg_.ablations.no_sentence_inference) return {s, std::nullopt};
    Var rep = ad::repeat_rows(ie, enc.sentences);
    Var matching = ad::concat({s, rep, ad::sub(s, rep), ad::mul(s, rep)});
    return {ffnn_relu(ctx, matching, sentence_ffnn_, cfg_.dropout), matching};
  }

  DocumentInference document_inference(const Context& ctx, Var sentence_inference) const {
    Var states = bilstm_forward(ctx, sentence_inference, document_lstm_);
    AttentionResult att = additive_attention_pool(ctx, states, sentence_attention_);
    return {att.pooled, att.weights, states};
  }

  PairForward forward_pair(const Context& ctx, const DocumentEncoding& enc, const DocumentInputs& in,
                           std::size_t head, std::size_t tail) const {
    if (head == tail) throw ConfigError("forward_pair: head and tail must differ");
    if (head >= in.entity_spans.size() || tail >= in.entity_spans.size()) {
      throw IndexError("forward_pair: entity index out of range");
    }
    PairForward out;
    Var ea = entity_representation(enc, in.entity_spans[head]);
    Var eb = entity_representation(enc, in.entity_spans[tail]);
    out.entity = entity_inference(ctx, ea, eb, in.first_mention[head], in.first_mention[tail]);
    if (cfg_.ablations.flat_document) {
      out.document = {*enc.document_mean, std::nullopt, std::nullopt};
    } else {
      out.sentence = sentence_inference(ctx, enc, out.entity.result);
      out.document = document_inference(ctx, out.sentence->vectors);
    }
    Var joined = ad::concat({out.entity.result, out.document.vector});
    out.probabilities =
        ad::sigmoid(ad::affine(joined, ctx.bind(*output_weight_), ctx.bind(*output_bias_)));
    return out;
  }

 private:
  struct Subspace {
    Parameter* proj_in = nullptr;
    Parameter* proj_out = nullptr;
    Parameter* biaffine = nullptr;
  };

  static Var zeros(const Context& ctx, std::size_t n) { return ctx.tape.constant(Tensor(Shape{n})); }

  void bind() {
    word_ = bind_embedding(params_, "embed.word");
    type_ = bind_embedding(params_, "embed.type");
    coref_ = bind_embedding(params_, "embed.coref");
    distance_ = bind_embedding(params_, "embed.distance");
    encoder_lstm_ = bind_lstm(params_, "encoder.lstm");
    for (std::size_t k = 0; k < cfg_.effective_subspaces(); ++k) {
      const std::string p = subspace_prefix(k);
      Subspace s{&params_.at(p + ".proj_in"), &params_.at(p + ".proj_out"), nullptr};
      if (!cfg_.ablations.no_bilinear) s.biaffine = &params_.at(p + ".biaffine");
      subspaces_.push_back(s);
    }
    entity_ffnn_ = bind_ffnn(params_, "entity.ffnn");
    if (!cfg_.ablations.flat_document) {
      sentence_lstm_ = bind_lstm(params_, "sentence.lstm");
      word_attention_ = bind_attention(params_, "sentence.word_attention");
      if (!cfg_.ablations.no_sentence_inference) sentence_ffnn_ = bind_ffnn(params_, "sentence.ffnn");
      document_lstm_ = bind_lstm(params_, "document.lstm");
      sentence_attention_ = bind_attention(params_, "document.sentence_attention");
    }
    output_weight_ = &params_.at("output.weight");
    output_bias_ = &params_.at("output.bias");
  }

  ModelConfig cfg_;
  ParameterSet params_;
  EmbeddingTable word_, type_, coref_, distance_;
  LstmParams encoder_lstm_, sentence_lstm_, document_lstm_;
  std::vector<Subspace> subspaces_;
  FfnnParams entity_ffnn_, sentence_ffnn_;
  AttentionParams word_attention_, sentence_attention_;
  Parameter* output_weight_ = nullptr;
  Parameter* output_bias_ = nullptr;
};

}  // namespace hin

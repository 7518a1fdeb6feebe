#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "hin/autodiff.hpp"
#include "hin/errors.hpp"
#include "hin/tensor.hpp"

namespace hin {

using json = nlohmann::json;

struct Mention {
  std::size_t sent_id = 0;
  std::size_t start = 0;  // within the sentence
  std::size_t end = 0;    // exclusive
  std::string name;

  bool operator==(const Mention&) const = default;
};

struct Entity {
  std::vector<Mention> mentions;
  std::string type;

  bool operator==(const Entity&) const = default;
};

struct RelationFact {
  std::size_t head = 0;
  std::size_t tail = 0;
  std::size_t relation = 0;
  std::vector<std::size_t> evidence;

  bool operator==(const RelationFact&) const = default;
};

struct Document {
  std::string id;
  std::vector<std::vector<std::string>> sentences;
  std::vector<Entity> entities;
  std::vector<RelationFact> facts;
  // False for blind files that carry no "labels" field.
  bool labeled = true;

  bool operator==(const Document&) const = default;

  std::size_t token_count() const {
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.size();
    return n;
  }

  std::size_t sentence_offset(std::size_t sent) const {
    std::size_t n = 0;
    for (std::size_t j = 0; j < sent; ++j) n += sentences[j].size();
    return n;
  }

  // Document-level token index of a mention's first token.
  std::size_t mention_start(const Mention& m) const { return sentence_offset(m.sent_id) + m.start; }

  // Start token of the entity's earliest mention in document order.
  std::size_t first_mention_start(std::size_t entity) const {
    std::size_t best = SIZE_MAX;
    for (const Mention& m : entities.at(entity).mentions) best = std::min(best, mention_start(m));
    return best;
  }
};

// Dense relation ids in first-registration order.
class RelationInventory {
 public:
  RelationInventory() = default;
  explicit RelationInventory(std::vector<std::string> names) {
    for (auto& n : names) add(n);
  }

  std::size_t add(const std::string& name) {
    auto [it, inserted] = index_.emplace(name, names_.size());
    if (inserted) names_.push_back(name);
    return it->second;
  }

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& name(std::size_t id) const { return names_.at(id); }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class InventoryMode {
  kFixed,   // unknown relation strings are ingestion errors
  kExtend,  // unknown relation strings are registered
};

// ---------------------------------------------------------------------------
// DocRED-schema ingestion

namespace detail {

inline std::string where(std::size_t record, const std::string& path) {
  return "record " + std::to_string(record) + " (" + path + ")";
}

template <typename T>
T field(const json& obj, const char* key, std::size_t record, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw IngestionError(where(record, path) + ": missing field '" + key + "'");
  }
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw IngestionError(where(record, path + "." + key) + ": " + e.what());
  }
}

}  // namespace detail

// Validates and converts parsed DocRED records. Empty sentences are dropped
// (reported through `warnings`) and sentence references are reindexed.
inline std::vector<Document> parse_docred(const json& records, RelationInventory& relations,
                                          InventoryMode mode,
                                          std::vector<std::string>* warnings = nullptr) {
  if (!records.is_array()) throw IngestionError("corpus must be a list of records");
  std::vector<Document> docs;
  docs.reserve(records.size());
  for (std::size_t r = 0; r < records.size(); ++r) {
    const json& rec = records[r];
    Document doc;
    doc.id = detail::field<std::string>(rec, "title", r, "title");
    const auto raw_sents =
        detail::field<std::vector<std::vector<std::string>>>(rec, "sents", r, "sents");

    std::vector<std::optional<std::size_t>> remap(raw_sents.size());
    for (std::size_t j = 0; j < raw_sents.size(); ++j) {
      if (raw_sents[j].empty()) {
        if (warnings) {
          warnings->push_back(detail::where(r, "sents[" + std::to_string(j) + "]") +
                              ": empty sentence dropped");
        }
        continue;
      }
      remap[j] = doc.sentences.size();
      doc.sentences.push_back(raw_sents[j]);
    }

    if (!rec.contains("vertexSet") || !rec["vertexSet"].is_array()) {
      throw IngestionError(detail::where(r, "vertexSet") + ": missing or not a list");
    }
    const json& vertices = rec["vertexSet"];
    for (std::size_t e = 0; e < vertices.size(); ++e) {
      const std::string epath = "vertexSet[" + std::to_string(e) + "]";
      if (!vertices[e].is_array() || vertices[e].empty()) {
        throw IngestionError(detail::where(r, epath) + ": entity has no mentions");
      }
      Entity entity;
      for (std::size_t m = 0; m < vertices[e].size(); ++m) {
        const std::string mpath = epath + "[" + std::to_string(m) + "]";
        const json& mj = vertices[e][m];
        const auto sent = detail::field<std::int64_t>(mj, "sent_id", r, mpath);
        const auto pos = detail::field<std::vector<std::int64_t>>(mj, "pos", r, mpath);
        const auto type = detail::field<std::string>(mj, "type", r, mpath);
        Mention mention;
        mention.name = mj.contains("name") ? mj["name"].get<std::string>() : std::string{};
        if (sent < 0 || static_cast<std::size_t>(sent) >= raw_sents.size()) {
          throw IngestionError(detail::where(r, mpath + ".sent_id") + ": sentence " +
                               std::to_string(sent) + " out of range (" +
                               std::to_string(raw_sents.size()) + " sentences)");
        }
        const std::size_t len = raw_sents[static_cast<std::size_t>(sent)].size();
        if (pos.size() != 2 || pos[0] < 0 || pos[0] >= pos[1] ||
            static_cast<std::size_t>(pos[1]) > len) {
          std::string span = pos.size() == 2 ? "[" + std::to_string(pos[0]) + ", " +
                                                   std::to_string(pos[1]) + ")"
                                             : "malformed";
          throw IngestionError(detail::where(r, mpath + ".pos") + ": span " + span +
                               " outside sentence " + std::to_string(sent) + " of length " +
                               std::to_string(len) + " (mention '" + mention.name + "')");
        }
        mention.sent_id = *remap[static_cast<std::size_t>(sent)];
        mention.start = static_cast<std::size_t>(pos[0]);
        mention.end = static_cast<std::size_t>(pos[1]);
        if (entity.mentions.empty()) entity.type = type;
        entity.mentions.push_back(std::move(mention));
      }
      doc.entities.push_back(std::move(entity));
    }

    doc.labeled = rec.contains("labels");
    if (doc.labeled) {
      const json& labels = rec["labels"];
      if (!labels.is_array()) throw IngestionError(detail::where(r, "labels") + ": not a list");
      for (std::size_t k = 0; k < labels.size(); ++k) {
        const std::string lpath = "labels[" + std::to_string(k) + "]";
        const json& lj = labels[k];
        const auto h = detail::field<std::int64_t>(lj, "h", r, lpath);
        const auto t = detail::field<std::int64_t>(lj, "t", r, lpath);
        const auto rel = detail::field<std::string>(lj, "r", r, lpath);
        const std::int64_t m = static_cast<std::int64_t>(doc.entities.size());
        if (h < 0 || h >= m) {
          throw IngestionError(detail::where(r, lpath + ".h") + ": entity " + std::to_string(h) +
                               " out of range (" + std::to_string(m) + " entities)");
        }
        if (t < 0 || t >= m) {
          throw IngestionError(detail::where(r, lpath + ".t") + ": entity " + std::to_string(t) +
                               " out of range (" + std::to_string(m) + " entities)");
        }
        if (h == t) throw IngestionError(detail::where(r, lpath) + ": head equals tail");
        RelationFact fact;
        fact.head = static_cast<std::size_t>(h);
        fact.tail = static_cast<std::size_t>(t);
        if (auto id = relations.find(rel)) {
          fact.relation = *id;
        } else if (mode == InventoryMode::kExtend) {
          fact.relation = relations.add(rel);
        } else {
          throw IngestionError(detail::where(r, lpath + ".r") + ": unknown relation '" + rel + "'");
        }
        const auto evidence = lj.contains("evidence")
                                  ? detail::field<std::vector<std::int64_t>>(lj, "evidence", r, lpath)
                                  : std::vector<std::int64_t>{};
        for (std::int64_t s : evidence) {
          if (s < 0 || static_cast<std::size_t>(s) >= raw_sents.size()) {
            throw IngestionError(detail::where(r, lpath + ".evidence") + ": sentence " +
                                 std::to_string(s) + " out of range");
          }
          if (auto mapped = remap[static_cast<std::size_t>(s)]) fact.evidence.push_back(*mapped);
        }
        doc.facts.push_back(std::move(fact));
      }
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw IngestionError("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline std::vector<Document> load_docred(const std::string& path, RelationInventory& relations,
                                         InventoryMode mode,
                                         std::vector<std::string>* warnings = nullptr) {
  try {
    return parse_docred(read_json_file(path), relations, mode, warnings);
  } catch (const IngestionError& e) {
    if (std::string(e.what()).find(path) != std::string::npos) throw;
    throw IngestionError(path + ": " + e.what());
  }
}

inline json serialize_docred(const std::vector<Document>& docs, const RelationInventory& relations) {
  json out = json::array();
  for (const Document& doc : docs) {
    json rec;
    rec["title"] = doc.id;
    rec["sents"] = doc.sentences;
    json vertices = json::array();
    for (const Entity& e : doc.entities) {
      json mentions = json::array();
      for (const Mention& m : e.mentions) {
        mentions.push_back({{"name", m.name},
                            {"sent_id", m.sent_id},
                            {"pos", {m.start, m.end}},
                            {"type", e.type}});
      }
      vertices.push_back(std::move(mentions));
    }
    rec["vertexSet"] = std::move(vertices);
    if (doc.labeled) {
      json labels = json::array();
      for (const RelationFact& f : doc.facts) {
        labels.push_back({{"h", f.head},
                          {"t", f.tail},
                          {"r", relations.name(f.relation)},
                          {"evidence", f.evidence}});
      }
      rec["labels"] = std::move(labels);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

// Relation inventory file: either a JSON list of names, or a DocRED-style
// object whose keys are relation names (key order is taken as sorted).
inline RelationInventory load_relations(const std::string& path) {
  const json j = read_json_file(path);
  RelationInventory inv;
  if (j.is_array()) {
    for (const auto& n : j) inv.add(n.get<std::string>());
  } else if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) inv.add(it.key());
  } else {
    throw IngestionError("'" + path + "': relation file must be a list or an object");
  }
  return inv;
}

// ---------------------------------------------------------------------------
// Pretrained vectors and vocabulary

struct PretrainedVectors {
  std::size_t dim = 0;
  std::vector<std::string> tokens;
  std::vector<std::vector<double>> rows;
  std::unordered_map<std::string, std::size_t> index;
};

// Text format: one token per line followed by `dim` decimals.
inline PretrainedVectors read_vectors(std::istream& in, const std::string& source = "vectors") {
  PretrainedVectors pv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token)) continue;
    std::vector<double> row;
    double v;
    while (ls >> v) row.push_back(v);
    if (!ls.eof()) {
      throw IngestionError(source + ":" + std::to_string(lineno) + ": malformed number");
    }
    if (pv.dim == 0) pv.dim = row.size();
    if (row.size() != pv.dim || row.empty()) {
      throw IngestionError(source + ":" + std::to_string(lineno) + ": expected " +
                           std::to_string(pv.dim) + " values, found " + std::to_string(row.size()));
    }
    if (pv.index.emplace(token, pv.tokens.size()).second) {
      pv.tokens.push_back(token);
      pv.rows.push_back(std::move(row));
    }
  }
  return pv;
}

inline PretrainedVectors load_vectors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open vector file '" + path + "'");
  return read_vectors(in, path);
}

struct VectorCoverage {
  std::size_t file_rows = 0;
  std::size_t vocab_words = 0;      // excluding PAD and UNK
  std::size_t exact_matches = 0;
  std::size_t lowercase_matches = 0;
  std::size_t random_init = 0;
};

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kNoType = 0;
  static constexpr std::size_t kUnkType = 1;

  Vocabulary() {
    add_word("<pad>");
    add_word("<unk>");
    add_type("<none>");
    add_type("<unk>");
  }

  std::size_t add_word(const std::string& w) {
    auto [it, inserted] = word_index_.emplace(w, words_.size());
    if (inserted) words_.push_back(w);
    return it->second;
  }

  std::size_t add_type(const std::string& t) {
    auto [it, inserted] = type_index_.emplace(t, types_.size());
    if (inserted) types_.push_back(t);
    return it->second;
  }

  std::size_t word_id(const std::string& w) const {
    auto it = word_index_.find(w);
    return it == word_index_.end() ? kUnk : it->second;
  }

  std::size_t type_id(const std::string& t) const {
    auto it = type_index_.find(t);
    return it == type_index_.end() ? kUnkType : it->second;
  }

  const std::vector<std::string>& words() const { return words_; }
  const std::vector<std::string>& types() const { return types_; }
  std::size_t size() const { return words_.size(); }
  std::size_t type_count() const { return types_.size(); }

  RelationInventory relations;

  // Rows aligned with word ids; only meaningful where from_pretrained is set.
  std::optional<Tensor> pretrained;
  std::vector<bool> from_pretrained;
  VectorCoverage coverage;

  json to_json() const {
    return {{"words", words_}, {"types", types_}, {"relations", relations.names()}};
  }

  static Vocabulary from_json(const json& j) {
    Vocabulary v;
    for (const auto& w : j.at("words")) v.add_word(w.get<std::string>());
    for (const auto& t : j.at("types")) v.add_type(t.get<std::string>());
    for (const auto& r : j.at("relations")) v.relations.add(r.get<std::string>());
    return v;
  }

 private:
  std::vector<std::string> words_;
  std::vector<std::string> types_;
  std::unordered_map<std::string, std::size_t> word_index_;
  std::unordered_map<std::string, std::size_t> type_index_;
};

inline std::string ascii_lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// Word ids follow first appearance among tokens seen at least `min_count`
// times. Pretrained rows are matched case-sensitively, then lowercased.
inline Vocabulary build_vocab(const std::vector<Document>& docs, std::size_t min_count,
                              const PretrainedVectors* vectors = nullptr,
                              std::size_t expected_dim = 0) {
  if (vectors && expected_dim != 0 && vectors->dim != expected_dim) {
    throw ConfigError("pretrained vectors have dimension " + std::to_string(vectors->dim) +
                      " but word_dim is " + std::to_string(expected_dim));
  }
  std::unordered_map<std::string, std::size_t> counts;
  std::vector<std::string> order;
  for (const Document& d : docs) {
    for (const auto& sent : d.sentences)
      for (const auto& tok : sent)
        if (counts[tok]++ == 0) order.push_back(tok);
  }
  Vocabulary vocab;
  for (const auto& tok : order)
    if (counts[tok] >= min_count) vocab.add_word(tok);
  for (const Document& d : docs)
    for (const Entity& e : d.entities) vocab.add_type(e.type);

  vocab.from_pretrained.assign(vocab.size(), false);
  if (vectors) {
    Tensor table(Shape{vocab.size(), vectors->dim});
    VectorCoverage cov;
    cov.file_rows = vectors->tokens.size();
    cov.vocab_words = vocab.size() - 2;
    for (std::size_t id = 2; id < vocab.size(); ++id) {
      const std::string& w = vocab.words()[id];
      auto it = vectors->index.find(w);
      if (it != vectors->index.end()) {
        ++cov.exact_matches;
      } else {
        it = vectors->index.find(ascii_lower(w));
        if (it != vectors->index.end()) ++cov.lowercase_matches;
      }
      if (it == vectors->index.end()) {
        ++cov.random_init;
        continue;
      }
      vocab.from_pretrained[id] = true;
      const auto& row = vectors->rows[it->second];
      std::copy(row.begin(), row.end(), table.data().begin() + id * vectors->dim);
    }
    vocab.pretrained = std::move(table);
    vocab.coverage = cov;
  } else {
    vocab.coverage.vocab_words = vocab.size() - 2;
    vocab.coverage.random_init = vocab.size() - 2;
  }
  return vocab;
}

// ---------------------------------------------------------------------------
// Relative distance buckets

inline constexpr int kMaxDistanceBucket = 9;
inline constexpr std::size_t kDistanceBuckets = 2 * kMaxDistanceBucket + 1;

// Signed log-scale bucket: exact for |x| <= 4, then [5,7] -> 5, [8,15] -> 6,
// [16,31] -> 7, [32,63] -> 8, >= 64 -> 9, mirrored for negatives.
inline int distance_bucket(long long x) {
  const long long a = x < 0 ? -x : x;
  int b;
  if (a <= 4) {
    b = static_cast<int>(a);
  } else if (a <= 7) {
    b = 5;
  } else if (a <= 15) {
    b = 6;
  } else if (a <= 31) {
    b = 7;
  } else if (a <= 63) {
    b = 8;
  } else {
    b = 9;
  }
  return x < 0 ? -b : b;
}

// Nonnegative row index into the distance table.
inline std::size_t distance_index(int bucket) {
  return static_cast<std::size_t>(bucket + kMaxDistanceBucket);
}

// (bucket(d_ab), bucket(d_ba)) with d_ab = start_a - start_b over the
// concatenated document.
inline std::pair<int, int> relative_distance_buckets(const Document& doc, std::size_t a, std::size_t b) {
  const long long d_ab = static_cast<long long>(doc.first_mention_start(a)) -
                         static_cast<long long>(doc.first_mention_start(b));
  return {distance_bucket(d_ab), distance_bucket(-d_ab)};
}

// ---------------------------------------------------------------------------
// Candidate pairs

struct PairExample {
  std::size_t doc = 0;  // index into the owning corpus
  std::size_t head = 0;
  std::size_t tail = 0;
  std::vector<double> labels;  // y in {0,1}^l
  int bucket_ab = 0;
  int bucket_ba = 0;

  bool positive() const {
    return std::any_of(labels.begin(), labels.end(), [](double y) { return y > 0.5; });
  }
};

// Every ordered pair (a, b), a != b, with labels filled from the facts.
inline std::vector<PairExample> enumerate_pairs(const Document& doc, std::size_t relation_count,
                                                std::size_t doc_index = 0) {
  std::vector<PairExample> pairs;
  const std::size_t m = doc.entities.size();
  if (m < 2) return pairs;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> slot;
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = 0; b < m; ++b) {
      if (a == b) continue;
      PairExample p;
      p.doc = doc_index;
      p.head = a;
      p.tail = b;
      p.labels.assign(relation_count, 0.0);
      std::tie(p.bucket_ab, p.bucket_ba) = relative_distance_buckets(doc, a, b);
      slot[{a, b}] = pairs.size();
      pairs.push_back(std::move(p));
    }
  for (const RelationFact& f : doc.facts) {
    if (f.relation >= relation_count) {
      throw IngestionError("document '" + doc.id + "': relation id " + std::to_string(f.relation) +
                           " exceeds relation count " + std::to_string(relation_count));
    }
    pairs[slot.at({f.head, f.tail})].labels[f.relation] = 1.0;
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Model-facing featurization

struct DocumentInputs {
  std::vector<std::size_t> words;   // per token
  std::vector<std::size_t> types;   // per token; Vocabulary::kNoType outside mentions
  std::vector<std::size_t> corefs;  // per token; 0 outside mentions
  std::vector<std::size_t> sentence_starts;
  std::vector<std::size_t> sentence_lengths;
  std::vector<std::vector<ad::RowSpan>> entity_spans;  // document-level token spans
  std::vector<std::size_t> first_mention;               // start token per entity

  std::size_t tokens() const { return words.size(); }
  std::size_t sentences() const { return sentence_starts.size(); }
};

// Coreference ids are 1 + the entity's rank by first appearance.
inline DocumentInputs featurize(const Document& doc, const Vocabulary& vocab) {
  DocumentInputs in;
  for (const auto& sent : doc.sentences) {
    in.sentence_starts.push_back(in.words.size());
    in.sentence_lengths.push_back(sent.size());
    for (const auto& tok : sent) in.words.push_back(vocab.word_id(tok));
  }
  in.types.assign(in.words.size(), Vocabulary::kNoType);
  in.corefs.assign(in.words.size(), 0);

  const std::size_t m = doc.entities.size();
  std::vector<std::size_t> order(m);
  for (std::size_t e = 0; e < m; ++e) order[e] = e;
  in.first_mention.resize(m);
  for (std::size_t e = 0; e < m; ++e) in.first_mention[e] = doc.first_mention_start(e);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return in.first_mention[x] < in.first_mention[y];
  });
  std::vector<std::size_t> coref(m);
  for (std::size_t rank = 0; rank < m; ++rank) coref[order[rank]] = rank + 1;

  in.entity_spans.resize(m);
  for (std::size_t e = 0; e < m; ++e) {
    const Entity& ent = doc.entities[e];
    const std::size_t type = vocab.type_id(ent.type);
    for (const Mention& mention : ent.mentions) {
      const std::size_t s = doc.mention_start(mention);
      const std::size_t len = mention.end - mention.start;
      in.entity_spans[e].push_back({s, s + len});
      for (std::size_t t = s; t < s + len; ++t) {
        in.types[t] = type;
        in.corefs[t] = coref[e];
      }
    }
  }
  return in;
}

}  // namespace hin

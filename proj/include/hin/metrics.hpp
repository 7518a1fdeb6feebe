#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "hin/corpus.hpp"

namespace hin {

struct PredictionRecord {
  std::string doc;
  std::size_t head = 0;
  std::size_t tail = 0;
  std::size_t relation = 0;
  double score = 0.0;

  bool operator==(const PredictionRecord&) const = default;
};

// Identity of a relational fact across records and gold annotations.
struct FactKey {
  std::string doc;
  std::size_t head = 0;
  std::size_t tail = 0;
  std::size_t relation = 0;

  auto operator<=>(const FactKey&) const = default;
};

inline FactKey key_of(const PredictionRecord& r) { return {r.doc, r.head, r.tail, r.relation}; }

struct GoldFact {
  FactKey key;
  std::vector<std::size_t> evidence;
  // Ign F1 needs the surface names of both arguments.
  std::set<std::string> head_names;
  std::set<std::string> tail_names;
};

inline std::set<std::string> entity_names(const Entity& e) {
  std::set<std::string> names;
  for (const Mention& m : e.mentions) names.insert(m.name);
  return names;
}

inline std::vector<GoldFact> gold_facts(const std::vector<Document>& docs) {
  std::vector<GoldFact> out;
  for (const Document& d : docs) {
    for (const RelationFact& f : d.facts) {
      out.push_back({{d.id, f.head, f.tail, f.relation},
                     f.evidence,
                     entity_names(d.entities.at(f.head)),
                     entity_names(d.entities.at(f.tail))});
    }
  }
  return out;
}

// (head name, tail name, relation) triples seen in a training split.
using TrainTriples = std::set<std::tuple<std::string, std::string, std::size_t>>;

inline TrainTriples train_triples(const std::vector<Document>& train) {
  TrainTriples out;
  for (const GoldFact& g : gold_facts(train))
    for (const auto& h : g.head_names)
      for (const auto& t : g.tail_names) out.emplace(h, t, g.key.relation);
  return out;
}

inline bool overlaps_train(const std::set<std::string>& heads, const std::set<std::string>& tails,
                           std::size_t relation, const TrainTriples& train) {
  for (const auto& h : heads)
    for (const auto& t : tails)
      if (train.count({h, t, relation})) return true;
  return false;
}

inline double f1_from_counts(std::size_t tp, std::size_t predicted, std::size_t gold) {
  // 2PR/(P+R) reduces to 2tp/(predicted + gold), which keeps rationals exact.
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(predicted + gold);
}

inline constexpr double kNoThreshold = std::numeric_limits<double>::infinity();

// Orders records by descending score with a deterministic tiebreak.
inline void sort_by_confidence(std::vector<PredictionRecord>& records) {
  std::sort(records.begin(), records.end(), [](const PredictionRecord& a, const PredictionRecord& b) {
    if (a.score != b.score) return a.score > b.score;
    return key_of(a) < key_of(b);
  });
}

// A record is predicted when its score reaches the threshold. The threshold
// is the score of the last record in the best prefix, so the chosen prefix
// is reproduced exactly (records tied with that score are included).
inline bool predicted_at(double score, double threshold) { return score >= threshold; }

struct ThresholdChoice {
  double threshold = kNoThreshold;
  double f1 = 0.0;
  std::size_t prefix = 0;
};

// Walks records from most to least confident and keeps the cut with the
// highest F1. Cuts are only taken between distinct scores, since no
// threshold can separate tied records; F1 ties favour the larger prefix.
inline ThresholdChoice select_threshold_detail(std::vector<PredictionRecord> records,
                                               const std::vector<GoldFact>& gold) {
  ThresholdChoice best;
  if (records.empty() || gold.empty()) return best;
  std::set<FactKey> gold_keys;
  for (const auto& g : gold) gold_keys.insert(g.key);
  sort_by_confidence(records);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (gold_keys.count(key_of(records[i]))) ++tp;
    const bool boundary = i + 1 == records.size() || records[i + 1].score != records[i].score;
    if (!boundary) continue;
    const double f1 = f1_from_counts(tp, i + 1, gold_keys.size());
    if (f1 > 0.0 && f1 >= best.f1) best = {records[i].score, f1, i + 1};
  }
  return best;
}

inline double select_threshold(const std::vector<PredictionRecord>& records, const std::vector<GoldFact>& gold) {
  return select_threshold_detail(records, gold).threshold;
}

struct EvidenceBucket {
  std::size_t gold = 0;
  std::size_t recalled = 0;
  double recall() const { return gold == 0 ? 0.0 : static_cast<double>(recalled) / static_cast<double>(gold); }
  bool operator==(const EvidenceBucket&) const = default;
};

// Keys 1..6 are exact evidence counts, 7 stands for "7 or more"; facts with
// no evidence land in `no_evidence` and stay out of the table.
struct EvidenceTable {
  std::map<std::size_t, EvidenceBucket> buckets;
  EvidenceBucket no_evidence;
  bool operator==(const EvidenceTable&) const = default;
};

inline constexpr std::size_t kEvidenceOpenBucket = 7;

inline std::string evidence_bucket_label(std::size_t key) {
  return key >= kEvidenceOpenBucket ? ">=7" : std::to_string(key);
}

struct EvalReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double ign_precision = 0.0;
  double ign_recall = 0.0;
  double ign_f1 = 0.0;
  double threshold = kNoThreshold;
  std::size_t predicted = 0;
  std::size_t gold = 0;
  std::size_t correct = 0;
  EvidenceTable by_evidence;
};

inline EvidenceTable recall_by_evidence(const std::vector<PredictionRecord>& records,
                                        const std::vector<GoldFact>& gold, double threshold) {
  std::set<FactKey> predicted;
  for (const auto& r : records)
    if (predicted_at(r.score, threshold)) predicted.insert(key_of(r));
  EvidenceTable table;
  for (const GoldFact& g : gold) {
    const std::size_t n = g.evidence.size();
    EvidenceBucket& bucket = n == 0 ? table.no_evidence : table.buckets[std::min(n, kEvidenceOpenBucket)];
    ++bucket.gold;
    if (predicted.count(g.key)) ++bucket.recalled;
  }
  return table;
}

// Everything the Ign filter needs: training triples and the surface names
// of every entity in the evaluated split.
struct IgnoreSet {
  TrainTriples train;
  std::map<std::pair<std::string, std::size_t>, std::set<std::string>> names;

  bool ignores(const FactKey& k) const {
    auto h = names.find({k.doc, k.head});
    auto t = names.find({k.doc, k.tail});
    if (h == names.end() || t == names.end()) return false;
    return overlaps_train(h->second, t->second, k.relation, train);
  }
};

inline IgnoreSet make_ignore_set(const std::vector<Document>& train, const std::vector<Document>& evaluated) {
  IgnoreSet out;
  out.train = train_triples(train);
  for (const Document& d : evaluated)
    for (std::size_t e = 0; e < d.entities.size(); ++e) out.names[{d.id, e}] = entity_names(d.entities[e]);
  return out;
}

// `ignore` may be null, in which case Ign scores equal the plain scores.
inline EvalReport evaluate_f1(const std::vector<PredictionRecord>& records, const std::vector<GoldFact>& gold,
                              double threshold, const IgnoreSet* ignore = nullptr) {
  EvalReport report;
  report.threshold = threshold;

  std::set<FactKey> gold_keys;
  for (const auto& g : gold) gold_keys.insert(g.key);
  std::set<FactKey> predicted;
  for (const auto& r : records)
    if (predicted_at(r.score, threshold)) predicted.insert(key_of(r));

  report.predicted = predicted.size();
  report.gold = gold_keys.size();
  for (const auto& k : predicted) report.correct += gold_keys.count(k);
  auto finish = [](std::size_t tp, std::size_t np, std::size_t ng, double& p, double& r, double& f) {
    p = np == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(np);
    r = ng == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(ng);
    f = f1_from_counts(tp, np, ng);
  };
  finish(report.correct, report.predicted, report.gold, report.precision, report.recall, report.f1);

  if (ignore == nullptr || ignore->train.empty()) {
    report.ign_precision = report.precision;
    report.ign_recall = report.recall;
    report.ign_f1 = report.f1;
  } else {
    std::size_t np = 0, ng = 0, tp = 0;
    for (const auto& k : gold_keys)
      if (!ignore->ignores(k)) ++ng;
    for (const auto& k : predicted) {
      if (ignore->ignores(k)) continue;
      ++np;
      tp += gold_keys.count(k);
    }
    finish(tp, np, ng, report.ign_precision, report.ign_recall, report.ign_f1);
  }
  report.by_evidence = recall_by_evidence(records, gold, threshold);
  return report;
}

}  // namespace hin

#include <gtest/gtest.h>

#include "support.hpp"

namespace hin {
namespace {

PredictionRecord rec(std::size_t head, std::size_t tail, std::size_t r, double score, const std::string& doc = "d") {
  return {doc, head, tail, r, score};
}

GoldFact gold(std::size_t head, std::size_t tail, std::size_t r, std::vector<std::size_t> evidence = {0},
              const std::string& doc = "d") {
  return {{doc, head, tail, r}, std::move(evidence), {}, {}};
}

TEST(Threshold, WorkedExample) {
  // TP at 0.9, FP at 0.8, TP at 0.7 with two gold facts: the full prefix
  // gives F1 = 4/5, better than 2/3 at the first cut.
  std::vector<PredictionRecord> r = {rec(0, 1, 0, 0.9), rec(0, 2, 0, 0.8), rec(1, 2, 0, 0.7)};
  std::vector<GoldFact> g = {gold(0, 1, 0), gold(1, 2, 0)};
  ThresholdChoice c = select_threshold_detail(r, g);
  EXPECT_EQ(c.threshold, 0.7);
  EXPECT_EQ(c.prefix, 3u);
  EXPECT_EQ(c.f1, 0.8);
  EXPECT_EQ(evaluate_f1(r, g, c.threshold).f1, 0.8);
}

TEST(Threshold, DegenerateInputs) {
  std::vector<GoldFact> g = {gold(0, 1, 0)};
  EXPECT_EQ(select_threshold({}, g), kNoThreshold);
  EXPECT_EQ(select_threshold({rec(1, 0, 0, 0.9)}, g), kNoThreshold);
  EXPECT_EQ(select_threshold({rec(0, 1, 0, 0.3)}, g), 0.3);
  EXPECT_EQ(select_threshold({rec(0, 1, 0, 0.3)}, {}), kNoThreshold);
  // With no threshold nothing is predicted.
  EvalReport e = evaluate_f1({rec(1, 0, 0, 0.9)}, g, kNoThreshold);
  EXPECT_EQ(e.predicted, 0u);
  EXPECT_EQ(e.f1, 0.0);
}

TEST(Threshold, TiedScoresCannotBeSplit) {
  // A TP and an FP share a score; the only cuts are before or after both.
  std::vector<PredictionRecord> r = {rec(0, 1, 0, 0.5), rec(1, 0, 0, 0.5)};
  std::vector<GoldFact> g = {gold(0, 1, 0)};
  ThresholdChoice c = select_threshold_detail(r, g);
  EXPECT_EQ(c.prefix, 2u);
  EXPECT_DOUBLE_EQ(c.f1, 2.0 / 3.0);
}

// Oracle: every threshold worth trying is a record score; compute F1 of the
// set {score >= t} from scratch for each.
double exhaustive_best_f1(const std::vector<PredictionRecord>& records, const std::vector<GoldFact>& g) {
  std::set<FactKey> gold_keys;
  for (const auto& x : g) gold_keys.insert(x.key);
  double best = 0.0;
  for (const auto& cut : records) {
    std::size_t tp = 0, np = 0;
    for (const auto& r : records)
      if (r.score >= cut.score) {
        ++np;
        tp += gold_keys.count(key_of(r));
      }
    if (tp == 0) continue;
    best = std::max(best, 2.0 * static_cast<double>(tp) / static_cast<double>(np + gold_keys.size()));
  }
  return best;
}

TEST(Threshold, MatchesExhaustiveEnumeration) {
  SeedStream rng = SeedStream::derive(2024, "threshold-fixtures");
  for (int fixture = 0; fixture < 200; ++fixture) {
    const std::size_t n = 1 + rng.below(100);
    std::vector<PredictionRecord> records;
    std::vector<GoldFact> g;
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse scores make ties common.
      const double score = static_cast<double>(rng.below(20)) / 20.0;
      records.push_back(rec(i, i + 1, 0, score));
      if (rng.bernoulli(0.4)) g.push_back(gold(i, i + 1, 0));
    }
    for (std::size_t extra = rng.below(3); extra > 0; --extra) g.push_back(gold(1000 + extra, 0, 0));
    const ThresholdChoice c = select_threshold_detail(records, g);
    const double oracle = exhaustive_best_f1(records, g);
    ASSERT_EQ(c.f1, oracle) << "fixture " << fixture;
    if (oracle > 0.0) {
      ASSERT_EQ(evaluate_f1(records, g, c.threshold).f1, oracle);
    }
  }
}

TEST(F1, HandFixtureIsExact) {
  // Three predictions (two correct) against four gold facts.
  std::vector<PredictionRecord> r = {rec(0, 1, 0, 0.9), rec(0, 2, 1, 0.8), rec(2, 0, 0, 0.7),
                                     rec(1, 2, 0, 0.1)};
  std::vector<GoldFact> g = {gold(0, 1, 0), gold(0, 2, 1), gold(1, 2, 0), gold(2, 1, 1)};
  EvalReport e = evaluate_f1(r, g, 0.5);
  EXPECT_EQ(e.predicted, 3u);
  EXPECT_EQ(e.correct, 2u);
  EXPECT_EQ(e.precision, 2.0 / 3.0);
  EXPECT_EQ(e.recall, 1.0 / 2.0);
  EXPECT_EQ(e.f1, 4.0 / 7.0);
  EXPECT_EQ(e.ign_f1, e.f1);  // no training facts
}

TEST(F1, BoundsAndZero) {
  std::vector<GoldFact> g = {gold(0, 1, 0)};
  EXPECT_EQ(evaluate_f1({rec(1, 0, 0, 0.9)}, g, 0.5).f1, 0.0);
  EXPECT_EQ(evaluate_f1({rec(0, 1, 0, 0.9)}, g, 0.5).f1, 1.0);
  EXPECT_EQ(f1_from_counts(0, 0, 0), 0.0);
}

Document named_doc(const std::string& id, const std::vector<std::string>& names) {
  Document d;
  d.id = id;
  d.sentences = {names};
  for (std::size_t i = 0; i < names.size(); ++i) d.entities.push_back({{Mention{0, i, i + 1, names[i]}}, "PER"});
  return d;
}

TEST(IgnF1, OneTrainOverlappingFact) {
  Document train = named_doc("t", {"Alice", "Bob"});
  train.facts = {{0, 1, 0, {0}}};
  Document dev = named_doc("v", {"Alice", "Bob", "Carol"});
  dev.facts = {{0, 1, 0, {0}}, {0, 2, 0, {0}}, {1, 2, 1, {0}}};
  const IgnoreSet ignore = make_ignore_set({train}, {dev});
  const auto g = gold_facts({dev});
  // Hits on (Alice, Bob, 0) [seen in train] and (Alice, Carol, 0); one miss.
  std::vector<PredictionRecord> r = {rec(0, 1, 0, 0.9, "v"), rec(0, 2, 0, 0.8, "v"), rec(2, 1, 1, 0.7, "v")};
  EvalReport e = evaluate_f1(r, g, 0.5, &ignore);
  EXPECT_EQ(e.precision, 2.0 / 3.0);
  EXPECT_EQ(e.recall, 2.0 / 3.0);
  // Ign universe: gold {AC0, BC1}, predicted {AC0, CB1}, one hit.
  EXPECT_EQ(e.ign_precision, 1.0 / 2.0);
  EXPECT_EQ(e.ign_recall, 1.0 / 2.0);
  EXPECT_EQ(e.ign_f1, 1.0 / 2.0);
  EXPECT_TRUE(ignore.ignores({"v", 0, 1, 0}));
  EXPECT_FALSE(ignore.ignores({"v", 0, 1, 1}));
  EXPECT_FALSE(ignore.ignores({"v", 1, 0, 0}));
  const IgnoreSet empty = make_ignore_set({}, {dev});
  EXPECT_EQ(evaluate_f1(r, g, 0.5, &empty).ign_f1, e.f1);
}

TEST(IgnF1, AnyMentionNameOverlapCounts) {
  Document train = named_doc("t", {"Robert", "Acme"});
  train.facts = {{0, 1, 2, {0}}};
  Document dev = named_doc("v", {"Bob", "Acme"});
  dev.entities[0].mentions.push_back(Mention{0, 1, 2, "Robert"});
  const IgnoreSet ignore = make_ignore_set({train}, {dev});
  EXPECT_TRUE(ignore.ignores({"v", 0, 1, 2}));
}

// Oracle: group gold facts by evidence count directly.
TEST(RecallByEvidence, MatchesGroupingOracle) {
  SeedStream rng = SeedStream::derive(5, "evidence");
  for (int fixture = 0; fixture < 50; ++fixture) {
    std::vector<GoldFact> g;
    std::vector<PredictionRecord> r;
    const std::size_t n = 1 + rng.below(60);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::size_t> ev(rng.below(10));
      g.push_back(gold(i, i + 1, 0, ev));
      if (rng.bernoulli(0.5)) r.push_back(rec(i, i + 1, 0, rng.uniform(0.0, 1.0)));
    }
    const double threshold = rng.uniform(0.0, 1.0);
    std::map<std::size_t, std::pair<std::size_t, std::size_t>> expect;
    std::pair<std::size_t, std::size_t> none{0, 0};
    for (const auto& f : g) {
      bool hit = false;
      for (const auto& p : r) hit |= key_of(p) == f.key && p.score >= threshold;
      auto& slot = f.evidence.empty() ? none : expect[f.evidence.size() >= 7 ? 7 : f.evidence.size()];
      ++slot.first;
      slot.second += hit;
    }
    EvidenceTable t = recall_by_evidence(r, g, threshold);
    ASSERT_EQ(t.buckets.size(), expect.size());
    for (const auto& [k, v] : expect) {
      ASSERT_EQ(t.buckets.at(k).gold, v.first);
      ASSERT_EQ(t.buckets.at(k).recalled, v.second);
    }
    ASSERT_EQ(t.no_evidence.gold, none.first);
    ASSERT_EQ(t.no_evidence.recalled, none.second);
  }
  EXPECT_EQ(evidence_bucket_label(3), "3");
  EXPECT_EQ(evidence_bucket_label(7), ">=7");
}

TEST(GoldFacts, CarryNamesAndEvidence) {
  Document d = named_doc("v", {"A", "B"});
  d.facts = {{1, 0, 3, {0}}};
  auto g = gold_facts({d});
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].key, (FactKey{"v", 1, 0, 3}));
  EXPECT_EQ(g[0].head_names, (std::set<std::string>{"B"}));
  Document unlabeled = d;
  unlabeled.labeled = false;
  unlabeled.facts.clear();
  EXPECT_TRUE(gold_facts({unlabeled}).empty());
}

}  // namespace
}  // namespace hin

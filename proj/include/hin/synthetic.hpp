#pragma once

// Desk-scale synthetic corpora in the DocRED document model.
//
// A fact (h, t, r) is written as two clauses in two distinct sentences:
// "<h> head-trigger(r)" and "tail-trigger(r) <t>". Every relation is used by
// at most one fact per document, and a decoy clause only ever carries one
// half of an unused relation, so a pair is labeled r exactly when its head
// sits next to head-trigger(r) and its tail next to tail-trigger(r).

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hin/corpus.hpp"
#include "hin/errors.hpp"
#include "hin/random.hpp"

namespace hin {

struct SyntheticSpec {
  std::size_t documents = 32;
  std::size_t entities = 4;   // per document
  std::size_t relations = 4;
  std::size_t sentences = 6;  // per document
  std::size_t vocab = 200;
  std::uint64_t seed = 7;
  // Non-empty names give independent corpora (e.g. "dev") from one seed.
  std::string split;
};

struct SyntheticStats {
  std::size_t facts = 0;
  std::size_t pairs = 0;
  std::size_t positive_labels = 0;
  // |evidence| -> number of facts
  std::map<std::size_t, std::size_t> evidence_histogram;

  double label_density(std::size_t relations) const {
    return pairs == 0 ? 0.0
                      : static_cast<double>(positive_labels) /
                            static_cast<double>(pairs * relations);
  }
};

struct SyntheticCorpus {
  std::vector<Document> documents;
  RelationInventory relations;
  SyntheticStats stats;  // tallied while planting facts
};

inline std::string synthetic_relation_name(std::size_t r) { return "R" + std::to_string(r); }

namespace detail {

struct Clause {
  std::vector<std::string> tokens;
  std::ptrdiff_t entity = -1;  // entity mentioned by this clause, if any
  std::size_t entity_offset = 0;
};

}  // namespace detail

inline SyntheticCorpus gen_synthetic(const SyntheticSpec& spec) {
  if (spec.documents < 1 || spec.entities < 1 || spec.relations < 1 || spec.sentences < 1 ||
      spec.vocab < 1) {
    throw ConfigError("synthetic spec values must all be >= 1");
  }
  if (spec.entities < 2 || spec.sentences < 2) {
    throw ConfigError("synthetic spec infeasible: facts need >= 2 entities and >= 2 sentences");
  }
  const std::size_t triggers = 2 * spec.relations;
  if (spec.vocab <= triggers) {
    throw ConfigError("synthetic spec infeasible: vocabulary " + std::to_string(spec.vocab) +
                      " cannot hold " + std::to_string(triggers) + " trigger tokens");
  }
  const std::size_t name_pool = std::max(spec.entities, (spec.vocab - triggers) / 3);
  if (spec.vocab < triggers + name_pool + 4) {
    throw ConfigError("synthetic spec infeasible: vocabulary " + std::to_string(spec.vocab) +
                      " too small for " + std::to_string(spec.entities) + " entities and " +
                      std::to_string(spec.relations) + " relations");
  }
  const std::size_t filler_pool = spec.vocab - triggers - name_pool;

  static const char* kTypes[] = {"PER", "ORG", "LOC", "TIME", "MISC"};

  SyntheticCorpus corpus;
  for (std::size_t r = 0; r < spec.relations; ++r) corpus.relations.add(synthetic_relation_name(r));

  auto head_trigger = [](std::size_t r) { return "rel" + std::to_string(r) + "_of"; };
  auto tail_trigger = [](std::size_t r) { return "has_rel" + std::to_string(r); };
  auto filler = [](std::size_t k) { return "w" + std::to_string(k); };

  for (std::size_t di = 0; di < spec.documents; ++di) {
    SeedStream rng = SeedStream::derive(spec.seed, spec.split.empty() ? "synth" : "synth:" + spec.split, di);
    const std::size_t m = spec.entities;
    const std::size_t L = spec.sentences;

    std::vector<std::size_t> names(name_pool);
    for (std::size_t k = 0; k < name_pool; ++k) names[k] = k;
    rng.shuffle(names);
    std::vector<std::string> entity_name(m);
    std::vector<std::string> entity_type(m);
    for (std::size_t e = 0; e < m; ++e) {
      entity_name[e] = "ent" + std::to_string(names[e]);
      entity_type[e] = kTypes[rng.below(std::size(kTypes))];
    }

    std::vector<std::vector<detail::Clause>> clauses(L);
    std::vector<bool> mentioned(m, false);
    auto mention_clause = [&](std::size_t e) {
      mentioned[e] = true;
      return detail::Clause{{entity_name[e]}, static_cast<std::ptrdiff_t>(e), 0};
    };

    // Facts: a random nonempty subset of relations, each used once.
    std::vector<std::size_t> rels(spec.relations);
    for (std::size_t r = 0; r < spec.relations; ++r) rels[r] = r;
    rng.shuffle(rels);
    const std::size_t fact_count = 1 + rng.below(spec.relations);
    std::vector<bool> relation_used(spec.relations, false);
    Document doc;
    doc.id = "synth-" + std::to_string(spec.seed) + "-" + (spec.split.empty() ? "" : spec.split + "-") +
             std::to_string(di);
    for (std::size_t k = 0; k < fact_count; ++k) {
      const std::size_t r = rels[k];
      relation_used[r] = true;
      const std::size_t h = rng.below(m);
      std::size_t t = rng.below(m - 1);
      if (t >= h) ++t;
      const std::size_t s_head = rng.below(L);
      std::size_t s_tail = rng.below(L - 1);
      if (s_tail >= s_head) ++s_tail;

      detail::Clause hc = mention_clause(h);
      hc.tokens.push_back(head_trigger(r));
      clauses[s_head].push_back(hc);
      detail::Clause tc = mention_clause(t);
      tc.tokens.insert(tc.tokens.begin(), tail_trigger(r));
      tc.entity_offset = 1;
      clauses[s_tail].push_back(tc);

      RelationFact fact{h, t, r, {std::min(s_head, s_tail), std::max(s_head, s_tail)}};
      ++corpus.stats.evidence_histogram[fact.evidence.size()];
      ++corpus.stats.facts;
      doc.facts.push_back(std::move(fact));
    }

    // Every entity gets at least one mention; some get a second, plain one.
    for (std::size_t e = 0; e < m; ++e) {
      if (!mentioned[e] || rng.bernoulli(0.3)) clauses[rng.below(L)].push_back(mention_clause(e));
    }

    // Decoys: one half of an unused relation next to a random entity.
    for (std::size_t r = 0; r < spec.relations; ++r) {
      if (relation_used[r] || !rng.bernoulli(0.5)) continue;
      detail::Clause dc = mention_clause(rng.below(m));
      if (rng.bernoulli(0.5)) {
        dc.tokens.push_back(head_trigger(r));
      } else {
        dc.tokens.insert(dc.tokens.begin(), tail_trigger(r));
        dc.entity_offset = 1;
      }
      clauses[rng.below(L)].push_back(dc);
    }

    doc.entities.resize(m);
    for (std::size_t e = 0; e < m; ++e) doc.entities[e].type = entity_type[e];
    doc.sentences.resize(L);
    for (std::size_t j = 0; j < L; ++j) {
      rng.shuffle(clauses[j]);
      auto& sent = doc.sentences[j];
      const std::size_t lead = 1 + rng.below(3);
      for (std::size_t k = 0; k < lead; ++k) sent.push_back(filler(rng.below(filler_pool)));
      for (const auto& clause : clauses[j]) {
        if (clause.entity >= 0) {
          const std::size_t start = sent.size() + clause.entity_offset;
          doc.entities[static_cast<std::size_t>(clause.entity)].mentions.push_back(
              Mention{j, start, start + 1, entity_name[static_cast<std::size_t>(clause.entity)]});
        }
        sent.insert(sent.end(), clause.tokens.begin(), clause.tokens.end());
        const std::size_t gap = 1 + rng.below(2);
        for (std::size_t k = 0; k < gap; ++k) sent.push_back(filler(rng.below(filler_pool)));
      }
    }
    // Mentions in document order within each entity.
    for (auto& ent : doc.entities) {
      std::sort(ent.mentions.begin(), ent.mentions.end(), [](const Mention& a, const Mention& b) {
        return a.sent_id != b.sent_id ? a.sent_id < b.sent_id : a.start < b.start;
      });
    }

    corpus.stats.pairs += m * (m - 1);
    // Relations are unique per document, so every fact is a distinct label.
    corpus.stats.positive_labels += doc.facts.size();
    corpus.documents.push_back(std::move(doc));
  }
  return corpus;
}

}  // namespace hin

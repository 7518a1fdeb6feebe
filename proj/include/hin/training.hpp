#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"

#include "hin/autodiff.hpp"
#include "hin/corpus.hpp"
#include "hin/errors.hpp"
#include "hin/metrics.hpp"
#include "hin/model.hpp"
#include "hin/optim.hpp"
#include "hin/random.hpp"

namespace hin {

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 12;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  // Probability of keeping each all-negative pair in a training epoch.
  double negative_rate = 1.0;
  // Scores below this are never materialized as prediction records.
  double report_floor = 1e-4;
  // Worker threads for read-only scoring; 0 picks the hardware count.
  std::size_t workers = 1;

  void validate() const {
    adam.validate();
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (!(negative_rate > 0.0 && negative_rate <= 1.0)) {
      throw ConfigError("train config: negative_rate must lie in (0, 1]");
    }
    if (!(report_floor >= 0.0 && report_floor < 1.0)) {
      throw ConfigError("train config: report_floor must lie in [0, 1)");
    }
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lr", c.adam.lr},
       {"beta1", c.adam.beta1},
       {"beta2", c.adam.beta2},
       {"eps", c.adam.eps},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"seed", c.seed},
       {"negative_rate", c.negative_rate},
       {"report_floor", c.report_floor},
       {"workers", c.workers}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const auto& v = it.value();
    if (k == "lr") v.get_to(c.adam.lr);
    else if (k == "beta1") v.get_to(c.adam.beta1);
    else if (k == "beta2") v.get_to(c.adam.beta2);
    else if (k == "eps") v.get_to(c.adam.eps);
    else if (k == "batch_size") v.get_to(c.batch_size);
    else if (k == "epochs") v.get_to(c.epochs);
    else if (k == "seed") v.get_to(c.seed);
    else if (k == "negative_rate") v.get_to(c.negative_rate);
    else if (k == "report_floor") v.get_to(c.report_floor);
    else if (k == "workers") v.get_to(c.workers);
    else throw ConfigError("unknown train config key '" + k + "'");
  }
}

// ---------------------------------------------------------------------------
// Prepared splits

struct Split {
  std::vector<Document> docs;
  std::vector<DocumentInputs> inputs;
  std::vector<PairExample> pairs;
};

inline Split prepare_split(std::vector<Document> docs, const Vocabulary& vocab, const ModelConfig& cfg) {
  Split s;
  s.docs = std::move(docs);
  for (std::size_t i = 0; i < s.docs.size(); ++i) {
    const Document& d = s.docs[i];
    if (d.entities.size() > cfg.max_entities) {
      throw ConfigError("document '" + d.id + "' has " + std::to_string(d.entities.size()) +
                        " entities; max_entities is " + std::to_string(cfg.max_entities));
    }
    if (d.token_count() == 0) throw IngestionError("document '" + d.id + "' has no tokens");
    s.inputs.push_back(featurize(d, vocab));
    auto pairs = enumerate_pairs(d, cfg.relations, i);
    s.pairs.insert(s.pairs.end(), std::make_move_iterator(pairs.begin()), std::make_move_iterator(pairs.end()));
  }
  return s;
}

// Model configuration with table sizes taken from the vocabulary.
inline ModelConfig sized_for(ModelConfig cfg, const Vocabulary& vocab) {
  cfg.vocab_size = vocab.size();
  cfg.type_count = vocab.type_count();
  cfg.relations = vocab.relations.size();
  return cfg;
}

inline std::unique_ptr<HinModel> make_model(const ModelConfig& cfg, const Vocabulary& vocab, std::uint64_t seed) {
  const Tensor* table = vocab.pretrained ? &*vocab.pretrained : nullptr;
  return std::make_unique<HinModel>(cfg, seed, table, table ? &vocab.from_pretrained : nullptr);
}

// ---------------------------------------------------------------------------
// Scoring

inline std::vector<PredictionRecord> score_document(const HinModel& model, const Document& doc,
                                                    const DocumentInputs& in, double floor) {
  std::vector<PredictionRecord> out;
  const std::size_t m = doc.entities.size();
  if (m < 2) return out;
  ad::Tape tape;
  Context ctx{tape, false, false, nullptr};
  DocumentEncoding enc = model.encode(ctx, in);
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = 0; b < m; ++b) {
      if (a == b) continue;
      const Tensor& p = model.forward_pair(ctx, enc, in, a, b).probabilities.value();
      for (std::size_t r = 0; r < p.size(); ++r)
        if (p[r] >= floor) out.push_back({doc.id, a, b, r, p[r]});
    }
  return out;
}

// Scores every document against read-only parameters. Documents are
// distributed over `workers` threads; the result is merged in ascending
// document-id order so it does not depend on scheduling.
inline std::vector<PredictionRecord> score_split(const HinModel& model, const Split& split, double floor,
                                                 std::size_t workers = 1) {
  const std::size_t n = split.docs.size();
  std::vector<std::vector<PredictionRecord>> per_doc(n);
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(n, 1));
  auto work = [&](std::size_t w) {
    for (std::size_t i = w; i < n; i += workers)
      per_doc[i] = score_document(model, split.docs[i], split.inputs[i], floor);
  };
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          work(w);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return split.docs[x].id < split.docs[y].id; });
  std::vector<PredictionRecord> out;
  for (std::size_t i : order) out.insert(out.end(), per_doc[i].begin(), per_doc[i].end());
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean per-pair BCE over the epoch
  EvalReport dev;
};

inline std::string format_epoch(const EpochLog& e) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "epoch=%zu loss=%.9f dev_p=%.6f dev_r=%.6f dev_f1=%.6f dev_ign_f1=%.6f threshold=%.9g",
                e.epoch, e.loss, e.dev.precision, e.dev.recall, e.dev.f1, e.dev.ign_f1, e.dev.threshold);
  return buf;
}

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  double threshold = kNoThreshold;
  EvalReport best_dev;
};

// Mean BCE over one batch of pairs, on a fresh tape, with gradients left in
// the model's parameters. Each document is encoded once per batch.
inline double batch_step(HinModel& model, const Split& train, const std::vector<std::size_t>& batch,
                         SeedStream& dropout_rng) {
  ad::Tape tape;
  Context ctx{tape, true, true, &dropout_rng};
  std::map<std::size_t, DocumentEncoding> encodings;
  std::vector<Var> losses;
  for (std::size_t pi : batch) {
    const PairExample& pair = train.pairs[pi];
    auto it = encodings.find(pair.doc);
    if (it == encodings.end()) it = encodings.emplace(pair.doc, model.encode(ctx, train.inputs[pair.doc])).first;
    PairForward fwd = model.forward_pair(ctx, it->second, train.inputs[pair.doc], pair.head, pair.tail);
    losses.push_back(ad::bce(fwd.probabilities, pair.labels));
  }
  Var total = losses.front();
  for (std::size_t i = 1; i < losses.size(); ++i) total = ad::add(total, losses[i]);
  Var loss = ad::scale(total, 1.0 / static_cast<double>(losses.size()));
  model.params().zero_grad();
  tape.backward(loss);
  return loss.value().item();
}

using EpochCallback = std::function<void(const EpochLog&)>;

// Trains on `train`, selects the threshold on `dev` after every epoch and
// leaves the model holding the parameters of the best dev-F1 epoch (the
// initial parameters when no epoch runs).
inline TrainResult train_loop(HinModel& model, const Split& train, const Split& dev, const TrainConfig& cfg,
                              const IgnoreSet* dev_ignore = nullptr, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train.pairs.empty()) throw ConfigError("train_loop: training split has no candidate pairs");
  TrainResult result;
  AdamState adam(model.params());
  std::vector<Tensor> best = model.params().snapshot();
  const auto dev_gold = gold_facts(dev.docs);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order;
    SeedStream negatives = SeedStream::derive(cfg.seed, "negatives", epoch);
    for (std::size_t i = 0; i < train.pairs.size(); ++i)
      if (cfg.negative_rate >= 1.0 || train.pairs[i].positive() || negatives.bernoulli(cfg.negative_rate))
        order.push_back(i);
    SeedStream shuffle = SeedStream::derive(cfg.seed, "shuffle", epoch);
    shuffle.shuffle(order);
    SeedStream dropout = SeedStream::derive(cfg.seed, "dropout", epoch);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
      const double loss = batch_step(model, train, batch, dropout);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "training diverged at epoch " << epoch << ", batch " << batches << " (loss " << loss
            << "); documents:";
        std::vector<std::string> ids;
        for (std::size_t pi : batch) ids.push_back(train.docs[train.pairs[pi].doc].id);
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
        for (const auto& id : ids) msg << ' ' << id;
        throw DivergenceError(msg.str());
      }
      adam_step(model.params(), adam, cfg.adam);
      loss_sum += loss * static_cast<double>(batch.size());
      ++batches;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.loss = loss_sum / static_cast<double>(order.size());
    const auto records = score_split(model, dev, cfg.report_floor, cfg.workers);
    const double delta = select_threshold(records, dev_gold);
    entry.dev = evaluate_f1(records, dev_gold, delta, dev_ignore);
    if (result.best_epoch == 0 || entry.dev.f1 > result.best_dev.f1) {
      result.best_epoch = epoch;
      result.best_dev = entry.dev;
      result.threshold = delta;
      best = model.params().snapshot();
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  model.params().restore(best);
  return result;
}

// Scores a labeled split and evaluates it at `threshold`.
inline EvalReport evaluate_split(const HinModel& model, const Split& split, double threshold, double floor,
                                 std::size_t workers = 1, const IgnoreSet* ignore = nullptr) {
  const auto records = score_split(model, split, floor, workers);
  return evaluate_f1(records, gold_facts(split.docs), threshold, ignore);
}

// ---------------------------------------------------------------------------
// Ablation harness

struct AblationResult {
  std::string flag;
  std::size_t base_parameters = 0;
  std::size_t ablated_parameters = 0;
  long long expected_delta = 0;
  TrainResult base;
  TrainResult ablated;
};

inline ModelConfig with_ablation(ModelConfig cfg, const std::string& flag) {
  if (!set_ablation(cfg.ablations, flag)) throw ConfigError("unknown ablation flag '" + flag + "'");
  return cfg;
}

// Checks that the layouts differ by exactly the closed-form delta, then
// trains both variants from the same seed on the same schedule.
inline AblationResult run_ablation(const ModelConfig& base_cfg, const std::string& flag, const Vocabulary& vocab,
                                   const std::vector<Document>& train_docs, const std::vector<Document>& dev_docs,
                                   const TrainConfig& train_cfg, const IgnoreSet* dev_ignore = nullptr) {
  AblationResult out;
  out.flag = flag;
  const ModelConfig ablated_cfg = with_ablation(base_cfg, flag);
  out.base_parameters = count_parameters(param_layout(base_cfg));
  out.ablated_parameters = count_parameters(param_layout(ablated_cfg));
  out.expected_delta = expected_parameter_delta(base_cfg, flag);
  const long long actual = static_cast<long long>(out.ablated_parameters) - static_cast<long long>(out.base_parameters);
  if (actual != out.expected_delta) {
    throw Error("ablation '" + flag + "': parameter count changed by " + std::to_string(actual) + ", expected " +
                std::to_string(out.expected_delta));
  }
  auto run = [&](const ModelConfig& cfg) {
    auto model = make_model(cfg, vocab, train_cfg.seed);
    Split train = prepare_split(train_docs, vocab, cfg);
    Split dev = prepare_split(dev_docs, vocab, cfg);
    return train_loop(*model, train, dev, train_cfg, dev_ignore);
  };
  out.base = run(base_cfg);
  out.ablated = run(ablated_cfg);
  return out;
}

}  // namespace hin

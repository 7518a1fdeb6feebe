#pragma once

// Batch command-line driver: synth, train, eval, predict, gradcheck, ablate.
// Commands return process exit codes; errors are mapped to
//   2 input/configuration, 3 divergence, 4 checkpoint mismatch,
//   5 gradient-check failure.

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hin/checkpoint.hpp"
#include "hin/corpus.hpp"
#include "hin/errors.hpp"
#include "hin/gradcheck.hpp"
#include "hin/metrics.hpp"
#include "hin/model.hpp"
#include "hin/synthetic.hpp"
#include "hin/training.hpp"

namespace hin::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kInputError = 2,
  kDiverged = 3,
  kMismatch = 4,
  kGradcheckFailed = 5,
};

// Structured run configuration: {"model": {...}, "train": {...},
// "min_count": n}. Every section is optional.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::size_t min_count = 1;
};

inline RunConfig load_run_config(const std::optional<std::string>& path) {
  RunConfig rc;
  if (!path) return rc;
  const json j = read_json_file(*path);
  if (!j.is_object()) throw ConfigError("'" + *path + "': configuration must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "model") from_json(it.value(), rc.model);
    else if (it.key() == "train") from_json(it.value(), rc.train);
    else if (it.key() == "min_count") it.value().get_to(rc.min_count);
    else throw ConfigError("'" + *path + "': unknown section '" + it.key() + "'");
  }
  return rc;
}

inline void require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) throw IngestionError("no such file: '" + path + "'");
}

inline std::string format_score(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9f", v);
  return buf;
}

// One line per record: doc id, head, tail, relation name, score; sorted by
// document id, then by descending score.
inline std::string predictions_text(std::vector<PredictionRecord> records, const RelationInventory& relations) {
  std::stable_sort(records.begin(), records.end(), [](const PredictionRecord& a, const PredictionRecord& b) {
    if (a.doc != b.doc) return a.doc < b.doc;
    if (a.score != b.score) return a.score > b.score;
    return key_of(a) < key_of(b);
  });
  std::ostringstream out;
  for (const auto& r : records) {
    out << r.doc << '\t' << r.head << '\t' << r.tail << '\t' << relations.name(r.relation) << '\t'
        << format_score(r.score) << '\n';
  }
  return out.str();
}

inline std::vector<PredictionRecord> above_threshold(const std::vector<PredictionRecord>& records, double threshold) {
  std::vector<PredictionRecord> out;
  for (const auto& r : records)
    if (predicted_at(r.score, threshold)) out.push_back(r);
  return out;
}

inline json report_json(const EvalReport& r) {
  json buckets = json::array();
  for (const auto& [key, b] : r.by_evidence.buckets) {
    buckets.push_back({{"evidence", evidence_bucket_label(key)}, {"gold", b.gold}, {"recalled", b.recalled},
                       {"recall", b.recall()}});
  }
  return {{"precision", r.precision},
          {"recall", r.recall},
          {"f1", r.f1},
          {"ign_precision", r.ign_precision},
          {"ign_recall", r.ign_recall},
          {"ign_f1", r.ign_f1},
          {"threshold", threshold_to_json(r.threshold)},
          {"predicted", r.predicted},
          {"gold", r.gold},
          {"correct", r.correct},
          {"recall_by_evidence", buckets},
          {"no_evidence", {{"gold", r.by_evidence.no_evidence.gold},
                           {"recalled", r.by_evidence.no_evidence.recalled}}}};
}

inline std::string report_table(const EvalReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "precision  " << r.precision << "\n";
  out << "recall     " << r.recall << "\n";
  out << "f1         " << r.f1 << "\n";
  out << "ign_f1     " << r.ign_f1 << "\n";
  out << "threshold  " << (std::isfinite(r.threshold) ? format_score(r.threshold) : std::string("inf")) << "\n";
  out << "predicted " << r.predicted << "  gold " << r.gold << "  correct " << r.correct << "\n\n";
  out << "evidence  facts  recall\n";
  for (const auto& [key, b] : r.by_evidence.buckets) {
    out << std::left << std::setw(8) << evidence_bucket_label(key) << "  " << std::right << std::setw(5) << b.gold
        << "  " << b.recall() << "\n";
  }
  if (r.by_evidence.no_evidence.gold > 0) {
    out << "(no evidence: " << r.by_evidence.no_evidence.gold << " facts, recall "
        << r.by_evidence.no_evidence.recall() << ")\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Commands

struct SynthArgs {
  SyntheticSpec spec;
  std::size_t dev_documents = 8;
  std::size_t test_documents = 8;
  std::string out;
};

inline int cmd_synth(const SynthArgs& a, std::ostream& log) {
  fs::create_directories(a.out);
  SyntheticCorpus train = gen_synthetic(a.spec);
  auto write_split = [&](const std::string& name, const SyntheticCorpus& c) {
    write_atomic(fs::path(a.out) / (name + ".json"), serialize_docred(c.documents, c.relations).dump(1) + "\n");
  };
  write_split("train", train);
  json stats = {{"train", {{"documents", train.documents.size()},
                           {"facts", train.stats.facts},
                           {"pairs", train.stats.pairs},
                           {"label_density", train.stats.label_density(train.relations.size())}}}};
  for (const auto& [name, n] : {std::pair<std::string, std::size_t>{"dev", a.dev_documents}, {"test", a.test_documents}}) {
    if (n == 0) continue;
    SyntheticSpec s = a.spec;
    s.documents = n;
    s.split = name;
    SyntheticCorpus c = gen_synthetic(s);
    write_split(name, c);
    stats[name] = {{"documents", c.documents.size()}, {"facts", c.stats.facts}, {"pairs", c.stats.pairs}};
  }
  write_atomic(fs::path(a.out) / "relations.json", json(train.relations.names()).dump() + "\n");
  write_atomic(fs::path(a.out) / "stats.json", stats.dump(2) + "\n");
  log << "wrote synthetic corpus to " << a.out << "\n";
  return kOk;
}

struct TrainArgs {
  std::optional<std::string> config;
  std::string train;
  std::string dev;
  std::optional<std::string> vectors;
  std::optional<std::string> relations;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> workers;
  std::vector<std::string> ablate;
};

inline RunConfig resolve_train_config(const TrainArgs& a) {
  RunConfig rc = load_run_config(a.config);
  if (a.seed) rc.train.seed = *a.seed;
  if (a.epochs) rc.train.epochs = *a.epochs;
  if (a.lr) rc.train.adam.lr = *a.lr;
  if (a.batch_size) rc.train.batch_size = *a.batch_size;
  if (a.workers) rc.train.workers = *a.workers;
  for (const auto& flag : a.ablate)
    if (!set_ablation(rc.model.ablations, flag)) throw ConfigError("unknown ablation flag '" + flag + "'");
  rc.train.validate();
  return rc;
}

struct LoadedCorpus {
  Vocabulary vocab;
  std::vector<Document> train;
  std::vector<Document> dev;
};

// Relations come from --relations when given, otherwise from the training
// split in order of first appearance; dev may not introduce new ones.
inline LoadedCorpus load_corpus(const std::string& train_path, const std::string& dev_path,
                                const std::optional<std::string>& relations_path,
                                const std::optional<std::string>& vectors_path, const RunConfig& rc,
                                std::ostream& log) {
  require_file(train_path);
  require_file(dev_path);
  RelationInventory relations;
  InventoryMode mode = InventoryMode::kExtend;
  if (relations_path) {
    require_file(*relations_path);
    relations = load_relations(*relations_path);
    mode = InventoryMode::kFixed;
  }
  std::vector<std::string> warnings;
  LoadedCorpus c;
  c.train = load_docred(train_path, relations, mode, &warnings);
  c.dev = load_docred(dev_path, relations, InventoryMode::kFixed, &warnings);
  for (const auto& w : warnings) log << "warning: " << w << "\n";
  std::optional<PretrainedVectors> vectors;
  if (vectors_path) {
    require_file(*vectors_path);
    vectors = load_vectors(*vectors_path);
  }
  c.vocab = build_vocab(c.train, rc.min_count, vectors ? &*vectors : nullptr, rc.model.word_dim);
  c.vocab.relations = relations;
  if (vectors) {
    const auto& cov = c.vocab.coverage;
    log << "vectors: " << cov.exact_matches << " exact, " << cov.lowercase_matches << " lowercase, "
        << cov.random_init << " random of " << cov.vocab_words << " words\n";
  }
  for (const auto& d : c.train)
    if (!d.labeled) throw IngestionError("'" + train_path + "': document '" + d.id + "' has no labels");
  return c;
}

inline int cmd_train(const TrainArgs& a, std::ostream& log) {
  RunConfig rc = resolve_train_config(a);
  LoadedCorpus corpus = load_corpus(a.train, a.dev, a.relations, a.vectors, rc, log);
  const ModelConfig cfg = sized_for(rc.model, corpus.vocab);
  cfg.validate();
  auto model = make_model(cfg, corpus.vocab, rc.train.seed);
  Split train = prepare_split(corpus.train, corpus.vocab, cfg);
  Split dev = prepare_split(corpus.dev, corpus.vocab, cfg);
  const IgnoreSet ignore = make_ignore_set(corpus.train, corpus.dev);

  fs::create_directories(a.out);
  std::ostringstream log_text;
  TrainResult result = train_loop(*model, train, dev, rc.train, &ignore, [&](const EpochLog& e) {
    const std::string line = format_epoch(e);
    log_text << line << "\n";
    log << line << "\n";
  });
  log_text << "best_epoch=" << result.best_epoch << " threshold=" << std::setprecision(17) << result.threshold
           << "\n";

  const fs::path out(a.out);
  save_checkpoint(out / "checkpoint", *model, corpus.vocab, result.threshold, {{"train", rc.train}});
  write_atomic(out / "train.log", log_text.str());
  const auto records = score_split(*model, dev, rc.train.report_floor, rc.train.workers);
  write_atomic(out / "dev_predictions.txt",
               predictions_text(above_threshold(records, result.threshold), corpus.vocab.relations));
  write_atomic(out / "threshold.json", json({{"threshold", threshold_to_json(result.threshold)},
                                             {"best_epoch", result.best_epoch}})
                                           .dump(2) + "\n");
  log << "best epoch " << result.best_epoch << ", dev F1 " << result.best_dev.f1 << "\n";
  return kOk;
}

struct EvalArgs {
  std::optional<std::string> config;
  std::string checkpoint;
  std::string data;
  std::optional<std::string> train;  // for Ign F1
  std::optional<double> threshold;
  std::string out;
  std::size_t workers = 1;
  bool all = false;  // predict: dump every materialized record
};

inline LoadedCheckpoint open_checkpoint(const EvalArgs& a) {
  if (!fs::is_directory(a.checkpoint)) throw IngestionError("no such checkpoint directory: '" + a.checkpoint + "'");
  if (a.config) {
    CheckpointMeta meta = read_checkpoint_meta(a.checkpoint);
    RunConfig rc = load_run_config(a.config);
    ModelConfig cfg = sized_for(rc.model, meta.vocab);
    return load_checkpoint(a.checkpoint, &cfg);
  }
  return load_checkpoint(a.checkpoint);
}

inline std::vector<Document> load_eval_docs(const std::string& path, const Vocabulary& vocab, std::ostream& log) {
  require_file(path);
  RelationInventory relations = vocab.relations;
  std::vector<std::string> warnings;
  auto docs = load_docred(path, relations, InventoryMode::kFixed, &warnings);
  for (const auto& w : warnings) log << "warning: " << w << "\n";
  return docs;
}

inline int cmd_eval(const EvalArgs& a, std::ostream& log) {
  LoadedCheckpoint ck = open_checkpoint(a);
  const Vocabulary& vocab = ck.meta.vocab;
  auto docs = load_eval_docs(a.data, vocab, log);
  for (const auto& d : docs) {
    if (!d.labeled) {
      throw IngestionError("'" + a.data + "': document '" + d.id +
                           "' has no labels; use the predict command for unlabeled corpora");
    }
  }
  std::optional<IgnoreSet> ignore;
  if (a.train) {
    auto train_docs = load_eval_docs(*a.train, vocab, log);
    ignore = make_ignore_set(train_docs, docs);
  }
  const double threshold = a.threshold ? *a.threshold : ck.meta.threshold;
  Split split = prepare_split(std::move(docs), vocab, ck.model->config());
  const auto records = score_split(*ck.model, split, TrainConfig{}.report_floor, a.workers);
  EvalReport report = evaluate_f1(records, gold_facts(split.docs), threshold, ignore ? &*ignore : nullptr);

  fs::create_directories(a.out);
  write_atomic(fs::path(a.out) / "report.json", report_json(report).dump(2) + "\n");
  const std::string table = report_table(report);
  write_atomic(fs::path(a.out) / "report.txt", table);
  log << table;
  return kOk;
}

inline int cmd_predict(const EvalArgs& a, std::ostream& log) {
  LoadedCheckpoint ck = open_checkpoint(a);
  const Vocabulary& vocab = ck.meta.vocab;
  auto docs = load_eval_docs(a.data, vocab, log);
  const double threshold = a.threshold ? *a.threshold : ck.meta.threshold;
  ModelConfig cfg = ck.model->config();
  Split split = prepare_split(std::move(docs), vocab, cfg);
  auto records = score_split(*ck.model, split, TrainConfig{}.report_floor, a.workers);
  if (!a.all) records = above_threshold(records, threshold);
  fs::create_directories(a.out);
  write_atomic(fs::path(a.out) / "predictions.txt", predictions_text(records, vocab.relations));
  log << records.size() << " predictions written to " << (fs::path(a.out) / "predictions.txt").string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// Gradient check on a tiny model over a short synthetic document.

struct GradcheckArgs {
  std::optional<std::string> config;
  std::uint64_t seed = 1;
  std::optional<std::string> out;
  std::size_t hidden = 2;  // d = 2 * hidden
  std::size_t subspaces = 2;
  std::size_t relations = 3;
  std::size_t sentences = 2;
  double eps = 1e-3;
  double tolerance = 1e-4;
  // Four-point differences at h = 1e-3 keep round-off in the summed loss
  // well below the tolerance even for gradients near 1e-8.
  int stencil = 4;
  // Parameters are redrawn from U(-scale, scale) before probing; the
  // training initializer leaves deep paths with gradients near round-off.
  double scale = 1.0;
  std::string inject_fault;  // testing hook: scale one op's backward
  std::vector<std::string> ablate;
};

inline constexpr std::size_t kGradcheckMaxWidth = 8;

struct GradcheckRun {
  ModelConfig config;
  GradCheckReport report;
};

inline GradcheckRun run_gradcheck(const GradcheckArgs& a) {
  ModelConfig cfg;
  if (a.config) cfg = load_run_config(a.config).model;
  cfg.word_dim = 3;
  cfg.type_dim = 2;
  cfg.coref_dim = 2;
  cfg.distance_dim = 2;
  cfg.hidden = a.hidden;
  cfg.subspaces = a.subspaces;
  cfg.subspace_dim = 0;
  cfg.dropout = 0.0;
  cfg.freeze_word_embeddings = false;
  for (const auto& flag : a.ablate)
    if (!set_ablation(cfg.ablations, flag)) throw ConfigError("unknown ablation flag '" + flag + "'");
  if (cfg.d() > kGradcheckMaxWidth) {
    throw ConfigError("gradcheck is limited to d <= " + std::to_string(kGradcheckMaxWidth) + " (requested d = " +
                      std::to_string(cfg.d()) + ")");
  }

  SyntheticSpec spec;
  spec.documents = 1;
  spec.entities = 3;
  spec.relations = a.relations;
  spec.sentences = a.sentences;
  spec.vocab = 2 * a.relations + 12;
  spec.seed = a.seed;
  SyntheticCorpus corpus = gen_synthetic(spec);
  Vocabulary vocab = build_vocab(corpus.documents, 1);
  vocab.relations = corpus.relations;
  cfg = sized_for(cfg, vocab);
  cfg.max_entities = spec.entities;

  HinModel model(cfg, a.seed);
  if (a.scale > 0.0) {
    SeedStream rng = SeedStream::derive(a.seed, "gradcheck");
    for (Parameter& p : model.params())
      for (double& v : p.value.values()) v = rng.uniform(-a.scale, a.scale);
  }
  Split split = prepare_split(corpus.documents, vocab, cfg);
  // Summed (not averaged) loss over every pair keeps gradients well above
  // finite-difference round-off.
  LossFn loss = [&](ad::Tape& tape) {
    Context ctx{tape, false, true, nullptr};
    const DocumentInputs& in = split.inputs[0];
    DocumentEncoding enc = model.encode(ctx, in);
    std::optional<Var> total;
    for (const PairExample& p : split.pairs) {
      Var l = ad::bce(model.forward_pair(ctx, enc, in, p.head, p.tail).probabilities, p.labels);
      total = total ? ad::add(*total, l) : l;
    }
    return *total;
  };
  GradCheckOptions opt;
  opt.eps = a.eps;
  opt.stencil = a.stencil;
  opt.seed = a.seed;
  opt.fault_op = a.inject_fault;
  return {cfg, finite_diff_check(model.params(), loss, opt)};
}

inline std::string gradcheck_table(const GradCheckReport& r, double tolerance) {
  std::ostringstream out;
  out << std::left << std::setw(44) << "parameter" << std::right << std::setw(8) << "probes" << std::setw(9)
      << "skipped" << std::setw(14) << "max_rel_err" << "  status\n";
  for (const auto& e : r.entries) {
    char err[32];
    std::snprintf(err, sizeof err, "%.3e", e.max_rel_error);
    out << std::left << std::setw(44) << e.name << std::right << std::setw(8) << e.probes << std::setw(9)
        << e.skipped << std::setw(14) << err << "  " << (e.max_rel_error < tolerance ? "ok" : "FAIL") << "\n";
  }
  return out.str();
}

inline int cmd_gradcheck(const GradcheckArgs& a, std::ostream& log) {
  GradcheckRun run = run_gradcheck(a);
  const std::string table = gradcheck_table(run.report, a.tolerance);
  log << table;
  if (a.out) {
    fs::create_directories(*a.out);
    write_atomic(fs::path(*a.out) / "gradcheck.txt", table);
  }
  const auto failing = run.report.failing(a.tolerance);
  if (!failing.empty()) {
    log << "gradient check failed for:";
    for (const auto& n : failing) log << ' ' << n;
    log << "\n";
    return kGradcheckFailed;
  }
  log << "all " << run.report.entries.size() << " parameters within " << a.tolerance << " (worst "
      << run.report.worst() << ")\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct AblateArgs {
  TrainArgs train;
  std::vector<std::string> flags;
};

inline int cmd_ablate(const AblateArgs& a, std::ostream& log) {
  RunConfig rc = resolve_train_config(a.train);
  LoadedCorpus corpus = load_corpus(a.train.train, a.train.dev, a.train.relations, a.train.vectors, rc, log);
  const ModelConfig base = sized_for(rc.model, corpus.vocab);
  base.validate();
  const IgnoreSet ignore = make_ignore_set(corpus.train, corpus.dev);
  const std::vector<std::string> flags = a.flags.empty() ? ablation_flags() : a.flags;

  json results = json::array();
  std::ostringstream table;
  table << std::left << std::setw(24) << "flag" << std::right << std::setw(12) << "params" << std::setw(12)
        << "delta" << std::setw(10) << "base_f1" << std::setw(10) << "abl_f1" << std::setw(11) << "base_ign"
        << std::setw(10) << "abl_ign" << "\n";
  for (const auto& flag : flags) {
    AblationResult r = run_ablation(base, flag, corpus.vocab, corpus.train, corpus.dev, rc.train, &ignore);
    results.push_back({{"flag", flag},
                       {"base_parameters", r.base_parameters},
                       {"ablated_parameters", r.ablated_parameters},
                       {"expected_delta", r.expected_delta},
                       {"base", report_json(r.base.best_dev)},
                       {"ablated", report_json(r.ablated.best_dev)}});
    char line[256];
    std::snprintf(line, sizeof line, "%-24s%12zu%12lld%10.4f%10.4f%11.4f%10.4f\n", flag.c_str(),
                  r.ablated_parameters, r.expected_delta, r.base.best_dev.f1, r.ablated.best_dev.f1,
                  r.base.best_dev.ign_f1, r.ablated.best_dev.ign_f1);
    table << line;
    log << line;
  }
  fs::create_directories(a.train.out);
  write_atomic(fs::path(a.train.out) / "ablation.json", results.dump(2) + "\n");
  write_atomic(fs::path(a.train.out) / "ablation.txt", table.str());
  return kOk;
}

// ---------------------------------------------------------------------------

// Runs a command with exceptions mapped to exit codes.
template <typename Fn>
int guarded(Fn&& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kDiverged;
  } catch (const CheckpointMismatch& e) {
    err << "error: " << e.what() << "\n";
    return kMismatch;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    err << "unexpected error: " << e.what() << "\n";
    return kUnexpected;
  }
}

inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Hierarchical inference network for document-level relation extraction"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic DocRED-format corpus");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--seed", synth.spec.seed, "Generator seed");
  s->add_option("--documents", synth.spec.documents, "Training documents");
  s->add_option("--dev-documents", synth.dev_documents, "Dev documents (0 to skip)");
  s->add_option("--test-documents", synth.test_documents, "Test documents (0 to skip)");
  s->add_option("--entities", synth.spec.entities, "Entities per document");
  s->add_option("--relations", synth.spec.relations, "Relation types");
  s->add_option("--sentences", synth.spec.sentences, "Sentences per document");
  s->add_option("--vocab", synth.spec.vocab, "Token vocabulary size");
  std::optional<std::string> synth_config;
  s->add_option("--config", synth_config, "Accepted for symmetry; unused");

  auto add_train_options = [](CLI::App* c, TrainArgs& t) {
    c->add_option("--config", t.config, "JSON run configuration");
    c->add_option("--train", t.train, "Training split (DocRED JSON)")->required();
    c->add_option("--dev", t.dev, "Dev split (DocRED JSON)")->required();
    c->add_option("--vectors", t.vectors, "Pretrained word vectors (text format)");
    c->add_option("--relations", t.relations, "Relation inventory (JSON list or object)");
    c->add_option("--out", t.out, "Output directory")->required();
    c->add_option("--seed", t.seed, "Seed for all randomness");
    c->add_option("--epochs", t.epochs, "Training epochs");
    c->add_option("--lr", t.lr, "Adam learning rate");
    c->add_option("--batch-size", t.batch_size, "Pairs per batch");
    c->add_option("--workers", t.workers, "Scoring threads (0 = all cores)");
  };

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model and select the dev threshold");
  add_train_options(t, train);
  t->add_option("--ablate", train.ablate, "Ablation flag(s) to switch on");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score a labeled split and report P/R/F1/Ign F1");
  EvalArgs predict;
  auto* p = app.add_subcommand("predict", "Write predictions for a (possibly unlabeled) split");
  std::uint64_t unused_seed = 0;
  for (auto [c, ea] : {std::pair{e, &eval}, std::pair{p, &predict}}) {
    c->add_option("--config", ea->config, "JSON run configuration overriding the stored model config");
    c->add_option("--checkpoint", ea->checkpoint, "Checkpoint directory")->required();
    c->add_option("--data", ea->data, "Split to score (DocRED JSON)")->required();
    c->add_option("--threshold", ea->threshold, "Override the stored threshold");
    c->add_option("--out", ea->out, "Output directory")->required();
    c->add_option("--workers", ea->workers, "Scoring threads (0 = all cores)");
    c->add_option("--seed", unused_seed, "Accepted for symmetry; scoring is deterministic");
  }
  e->add_option("--train", eval.train, "Training split, enables Ign F1");
  p->add_flag("--all", predict.all, "Write every record above the reporting floor");

  GradcheckArgs grad;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference check of every parameter gradient");
  g->add_option("--config", grad.config, "JSON run configuration (ablation flags are honoured)");
  g->add_option("--seed", grad.seed, "Seed");
  g->add_option("--out", grad.out, "Directory for gradcheck.txt");
  g->add_option("--hidden", grad.hidden, "LSTM units per direction (d = 2 * hidden <= 8)");
  g->add_option("--subspaces", grad.subspaces, "Number of latent spaces K");
  g->add_option("--relations", grad.relations, "Relation types");
  g->add_option("--sentences", grad.sentences, "Sentences in the probe document");
  g->add_option("--eps", grad.eps, "Finite-difference step");
  g->add_option("--tolerance", grad.tolerance, "Maximum relative error");
  g->add_option("--stencil", grad.stencil, "Finite-difference points: 2 or 4")->check(CLI::IsMember({2, 4}));
  g->add_option("--scale", grad.scale, "Redraw parameters from U(-scale, scale); 0 keeps the initializer");
  g->add_option("--ablate", grad.ablate, "Ablation flag(s)");
  g->add_option("--inject-fault", grad.inject_fault, "Testing hook: corrupt the backward rule of one op");

  AblateArgs ablate;
  auto* ab = app.add_subcommand("ablate", "Train base and ablated variants and compare");
  add_train_options(ab, ablate.train);
  ab->add_option("--flag", ablate.flags, "Ablation flag(s); default all five");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kInputError;
  }

  auto* cmd = app.get_subcommands().front();
  const std::string name = cmd->get_name();
  return guarded([&]() -> int {
    if (name == "synth") return cmd_synth(synth, out);
    if (name == "train") return cmd_train(train, out);
    if (name == "eval") return cmd_eval(eval, out);
    if (name == "predict") return cmd_predict(predict, out);
    if (name == "gradcheck") return cmd_gradcheck(grad, out);
    return cmd_ablate(ablate, out);
  }, err);
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(std::move(args));
}

}  // namespace hin::cli

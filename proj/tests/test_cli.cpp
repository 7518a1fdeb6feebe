#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "hin/cli.hpp"
#include "support.hpp"

namespace hin {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

// Tiny corpus plus a small-model config shared by the flow tests.
class CliFlow : public ::testing::Test {
 protected:
  void SetUp() override {
    ASSERT_EQ(run_cli({"synth", "--out", dir.str("data"), "--documents", "4", "--dev-documents", "2",
                       "--test-documents", "2", "--entities", "3", "--relations", "3", "--sentences", "3",
                       "--vocab", "40", "--seed", "2"})
                  .code,
              0);
    write_text(dir.path() / "config.json",
               R"({"model": {"word_dim": 6, "type_dim": 3, "coref_dim": 3, "distance_dim": 3, "hidden": 4,
                             "dropout": 0.1, "freeze_word_embeddings": false},
                   "train": {"epochs": 2, "lr": 0.01, "batch_size": 6}})");
  }

  Result train(const std::string& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> args = {"train", "--config", dir.str("config.json"), "--train", dir.str("data/train.json"),
                                     "--dev", dir.str("data/dev.json"), "--out", dir.str(out), "--seed", "3"};
    args.insert(args.end(), extra.begin(), extra.end());
    return run_cli(args);
  }

  TempDir dir{"cli"};
};

TEST_F(CliFlow, SynthTrainEvalPredict) {
  for (const char* f : {"train.json", "dev.json", "test.json", "relations.json", "stats.json"})
    EXPECT_TRUE(fs::exists(dir.path() / "data" / f)) << f;

  Result t = train("run");
  ASSERT_EQ(t.code, 0) << t.err;
  for (const char* f : {"checkpoint/params.bin", "checkpoint/manifest.txt", "checkpoint/meta.json", "train.log",
                        "dev_predictions.txt", "threshold.json"})
    EXPECT_TRUE(fs::exists(dir.path() / "run" / f)) << f;
  EXPECT_NE(read_file(dir.path() / "run/train.log").find("epoch=2 "), std::string::npos);

  Result e = run_cli({"eval", "--checkpoint", dir.str("run/checkpoint"), "--data", dir.str("data/dev.json"),
                      "--train", dir.str("data/train.json"), "--out", dir.str("eval")});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto report = nlohmann::json::parse(read_file(dir.path() / "eval/report.json"));
  for (const char* k : {"precision", "recall", "f1", "ign_f1", "threshold", "recall_by_evidence"})
    EXPECT_TRUE(report.contains(k)) << k;
  EXPECT_NE(e.out.find("evidence"), std::string::npos);

  Result p = run_cli({"predict", "--checkpoint", dir.str("run/checkpoint"), "--data", dir.str("data/test.json"),
                      "--out", dir.str("pred"), "--all"});
  ASSERT_EQ(p.code, 0) << p.err;
  std::istringstream lines(read_file(dir.path() / "pred/predictions.txt"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    ++n;
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 4) << line;
  }
  EXPECT_GT(n, 0u);
}

TEST_F(CliFlow, ThresholdOneGivesZeroPrecision) {
  ASSERT_EQ(train("run").code, 0);
  Result e = run_cli({"eval", "--checkpoint", dir.str("run/checkpoint"), "--data", dir.str("data/dev.json"),
                      "--threshold", "1.0", "--out", dir.str("eval")});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto report = nlohmann::json::parse(read_file(dir.path() / "eval/report.json"));
  EXPECT_EQ(report["precision"], 0.0);
  EXPECT_EQ(report["predicted"], 0);
}

TEST_F(CliFlow, RerunsAreByteIdentical) {
  ASSERT_EQ(train("a").code, 0);
  ASSERT_EQ(train("b").code, 0);
  for (const char* f : {"checkpoint/params.bin", "checkpoint/manifest.txt", "checkpoint/meta.json", "train.log",
                        "dev_predictions.txt", "threshold.json"})
    EXPECT_EQ(read_file(dir.path() / "a" / f), read_file(dir.path() / "b" / f)) << f;
}

TEST_F(CliFlow, UnlabeledEvalIsAnInputError) {
  auto docs = nlohmann::json::parse(read_file(dir.path() / "data/test.json"));
  for (auto& d : docs) d.erase("labels");
  write_text(dir.path() / "unlabeled.json", docs.dump());
  ASSERT_EQ(train("run").code, 0);
  Result e = run_cli({"eval", "--checkpoint", dir.str("run/checkpoint"), "--data", dir.str("unlabeled.json"),
                      "--out", dir.str("eval")});
  EXPECT_EQ(e.code, 2);
  EXPECT_NE(e.err.find("predict"), std::string::npos) << e.err;
  // The same file is fine for predict.
  EXPECT_EQ(run_cli({"predict", "--checkpoint", dir.str("run/checkpoint"), "--data", dir.str("unlabeled.json"),
                     "--out", dir.str("pred")})
                .code,
            0);
}

TEST_F(CliFlow, ConfigMismatchExitsFour) {
  ASSERT_EQ(train("run").code, 0);
  write_text(dir.path() / "other.json", R"({"model": {"word_dim": 6, "type_dim": 3, "coref_dim": 3,
                                          "distance_dim": 3, "hidden": 5}})");
  Result e = run_cli({"eval", "--checkpoint", dir.str("run/checkpoint"), "--data", dir.str("data/dev.json"),
                      "--config", dir.str("other.json"), "--out", dir.str("eval")});
  EXPECT_EQ(e.code, 4);
  EXPECT_NE(e.err.find("encoder.lstm"), std::string::npos) << e.err;
}

TEST_F(CliFlow, AblateWritesTable) {
  Result a = run_cli({"ablate", "--config", dir.str("config.json"), "--train", dir.str("data/train.json"), "--dev",
                      dir.str("data/dev.json"), "--out", dir.str("abl"), "--epochs", "1", "--flag", "no_bilinear",
                      "--flag", "flat_document"});
  ASSERT_EQ(a.code, 0) << a.err;
  const auto j = nlohmann::json::parse(read_file(dir.path() / "abl/ablation.json"));
  ASSERT_EQ(j.size(), 2u);
  EXPECT_EQ(j[0]["flag"], "no_bilinear");
  EXPECT_EQ(j[0]["expected_delta"], -2 * 4 * 4 * 4);  // K * d_s^3 with d = 8, K = 2
}

TEST(Cli, MissingInputNamesThePath) {
  TempDir dir("cli-missing");
  Result r = run_cli({"train", "--train", dir.str("nope.json"), "--dev", dir.str("nope.json"), "--out",
                      dir.str("out")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(dir.str("nope.json")), std::string::npos) << r.err;
  Result e = run_cli({"eval", "--checkpoint", dir.str("ck"), "--data", dir.str("x.json"), "--out", dir.str("o")});
  EXPECT_EQ(e.code, 2);
  EXPECT_NE(e.err.find(dir.str("ck")), std::string::npos) << e.err;
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 2);
  EXPECT_EQ(run_cli({"synth"}).code, 2);
  EXPECT_EQ(run_cli({"--help"}).code, 0);
}

TEST(Cli, UnknownConfigKeyIsAnInputError) {
  TempDir dir("cli-config");
  write_text(dir.path() / "c.json", R"({"model": {"hiden": 3}})");
  ASSERT_EQ(run_cli({"synth", "--out", dir.str("d"), "--documents", "2", "--entities", "3", "--relations", "2",
                     "--sentences", "2", "--vocab", "30"})
                .code,
            0);
  Result r = run_cli({"train", "--config", dir.str("c.json"), "--train", dir.str("d/train.json"), "--dev",
                      dir.str("d/dev.json"), "--out", dir.str("o")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("hiden"), std::string::npos) << r.err;
}

TEST(Cli, GradcheckPassesAndRejectsWideModels) {
  Result ok = run_cli({"gradcheck"});
  EXPECT_EQ(ok.code, 0) << ok.out << ok.err;
  EXPECT_NE(ok.out.find("entity.space1.biaffine"), std::string::npos);
  Result wide = run_cli({"gradcheck", "--hidden", "5"});
  EXPECT_EQ(wide.code, 2);
  EXPECT_NE(wide.err.find("d <= 8"), std::string::npos) << wide.err;
}

TEST(Cli, GradcheckInjectedFaultNamesTheLayer) {
  Result r = run_cli({"gradcheck", "--inject-fault", "bilinear"});
  EXPECT_EQ(r.code, 5);
  EXPECT_NE(r.out.find("gradient check failed for:"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("biaffine"), std::string::npos) << r.out;
}

TEST(Cli, PredictionsAreSortedByDocThenScore) {
  RelationInventory rel(std::vector<std::string>{"a", "b"});
  std::vector<PredictionRecord> r = {{"d2", 0, 1, 0, 0.9}, {"d1", 0, 1, 1, 0.2}, {"d1", 1, 0, 0, 0.7}};
  EXPECT_EQ(cli::predictions_text(r, rel),
            "d1\t1\t0\ta\t0.700000000\nd1\t0\t1\tb\t0.200000000\nd2\t0\t1\ta\t0.900000000\n");
}

}  // namespace
}  // namespace hin

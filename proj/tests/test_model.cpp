#include <gtest/gtest.h>

#include "hin/cli.hpp"
#include "reference.hpp"
#include "support.hpp"

namespace hin {
namespace {

using ad::Tape;
using testing::random_tensor;
using testing::tiny_data;

void randomize(HinModel& model, std::uint64_t seed) {
  SeedStream rng = SeedStream::derive(seed, "perturb");
  for (auto& p : model.params()) p.value = random_tensor(p.value.shape(), rng, -0.6, 0.6);
}

TEST(ModelConfig, DerivedWidths) {
  ModelConfig c;
  EXPECT_EQ(c.d(), 256u);
  EXPECT_EQ(c.effective_subspace_dim(), 128u);
  EXPECT_EQ(c.entity_ffnn_input(), 2u * 4 * 128 + 20);
  c.ablations.single_space = true;
  EXPECT_EQ(c.effective_subspaces(), 1u);
  EXPECT_EQ(c.effective_subspace_dim(), 256u);
}

TEST(ModelConfig, ValidationErrors) {
  ModelConfig c;
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.hidden = 1;
  c.subspaces = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.relations = 0;
  EXPECT_THROW(param_layout(c), ConfigError);
}

TEST(ModelConfig, JsonRoundTripAndPartialUpdates) {
  ModelConfig c;
  c.hidden = 7;
  c.ablations.no_bilinear = true;
  nlohmann::json j = c;
  ModelConfig back;
  from_json(j, back);
  EXPECT_EQ(back, c);

  ModelConfig partial;
  from_json(nlohmann::json{{"hidden", 3}, {"ablations", {{"flat_document", true}}}}, partial);
  EXPECT_EQ(partial.hidden, 3u);
  EXPECT_TRUE(partial.ablations.flat_document);
  EXPECT_EQ(partial.word_dim, 100u);
  EXPECT_THROW(from_json(nlohmann::json{{"hiden", 3}}, partial), ConfigError);
  EXPECT_THROW(from_json(nlohmann::json{{"ablations", {{"no_such", true}}}}, partial), ConfigError);
}

TEST(ModelLayout, NamesAndShapes) {
  ModelConfig c = testing::tiny_config();
  const Layout layout = param_layout(c);
  std::map<std::string, Shape> shapes;
  for (const auto& s : layout) shapes[s.name] = s.shape;
  const std::size_t d = c.d(), ds = c.effective_subspace_dim();
  EXPECT_EQ(shapes.at("entity.space0.proj_in"), (Shape{d, d}));
  EXPECT_EQ(shapes.at("entity.space1.proj_out"), (Shape{ds, d}));
  EXPECT_EQ(shapes.at("entity.space1.biaffine"), (Shape{ds, ds, ds}));
  EXPECT_EQ(shapes.at("entity.ffnn.layer0.weight"), (Shape{d, 2 * 4 * ds + c.distance_dim}));
  EXPECT_EQ(shapes.at("sentence.ffnn.layer0.weight"), (Shape{d, 4 * d}));
  EXPECT_EQ(shapes.at("document.lstm.fwd.w_ih"), (Shape{4 * c.hidden, d}));
  EXPECT_EQ(shapes.at("output.weight"), (Shape{c.relations, 2 * d}));
  EXPECT_EQ(shapes.at("embed.distance"), (Shape{kDistanceBuckets, c.distance_dim}));

  ModelConfig sized = sized_for(c, Vocabulary{});
  sized.relations = c.relations;
  HinModel model(sized, 1);
  EXPECT_EQ(model.params().element_count(), count_parameters(param_layout(model.config())));
  EXPECT_FALSE(model.params().at("embed.word").frozen);
}

TEST(ModelLayout, AblationDeltasMatchClosedForm) {
  // Property over a grid of shapes: the closed form agrees with the layout.
  for (std::size_t hidden : {2, 3, 8})
    for (std::size_t k : {1, 2, 3})
      for (std::size_t dist : {1, 5}) {
        ModelConfig base;
        base.hidden = hidden;
        base.subspaces = k;
        base.distance_dim = dist;
        if (base.d() < k) continue;
        const auto n0 = static_cast<long long>(count_parameters(param_layout(base)));
        for (const auto& flag : ablation_flags()) {
          ModelConfig ab = base;
          set_ablation(ab.ablations, flag);
          const auto n1 = static_cast<long long>(count_parameters(param_layout(ab)));
          EXPECT_EQ(n1 - n0, expected_parameter_delta(base, flag)) << flag << " h=" << hidden << " K=" << k;
        }
      }
  EXPECT_THROW(expected_parameter_delta(ModelConfig{}, "no_such"), ConfigError);
}

TEST(ModelLayout, DefaultConfigurationBilinearDelta) {
  ModelConfig c;  // d = 256, K = 2, d_s = 128
  EXPECT_EQ(expected_parameter_delta(c, "no_bilinear"), -2LL * 128 * 128 * 128);
  EXPECT_EQ(expected_parameter_delta(c, "no_translation"), 0);
  ModelConfig single = c;
  single.ablations.single_space = true;
  const Layout l = param_layout(single);
  std::size_t projections = 0;
  for (const auto& s : l)
    if (s.name.find("proj_") != std::string::npos) ++projections;
  EXPECT_EQ(projections, 2u);
}

class ForwardOracle : public ::testing::TestWithParam<std::string> {};

TEST_P(ForwardOracle, ForwardPairMatchesStraightLine) {
  auto data = tiny_data(2, 5);
  ModelConfig cfg = data.config;
  if (!GetParam().empty()) set_ablation(cfg.ablations, GetParam());
  HinModel model(cfg, 3);
  randomize(model, 3);
  Split split = prepare_split(data.corpus.documents, data.vocab, cfg);
  for (std::size_t di = 0; di < split.docs.size(); ++di) {
    const DocumentInputs& in = split.inputs[di];
    Tape tape;
    Context ctx{tape, false, false};
    DocumentEncoding enc = model.encode(ctx, in);
    for (std::size_t a = 0; a < split.docs[di].entities.size(); ++a)
      for (std::size_t b = 0; b < split.docs[di].entities.size(); ++b) {
        if (a == b) continue;
        PairForward f = model.forward_pair(ctx, enc, in, a, b);
        reference::Forward r = reference::forward_pair(model, in, a, b);
        for (std::size_t i = 0; i < r.entity_blocks.size(); ++i)
          ASSERT_NEAR(f.entity.blocks.value()[i], r.entity_blocks[i], 1e-10);
        for (std::size_t i = 0; i < r.entity.size(); ++i) ASSERT_NEAR(f.entity.result.value()[i], r.entity[i], 1e-10);
        for (std::size_t i = 0; i < r.document.size(); ++i)
          ASSERT_NEAR(f.document.vector.value()[i], r.document[i], 1e-10);
        for (std::size_t i = 0; i < r.probabilities.size(); ++i)
          ASSERT_NEAR(f.probabilities.value()[i], r.probabilities[i], 1e-10);
      }
  }
}

INSTANTIATE_TEST_SUITE_P(AllVariants, ForwardOracle,
                         ::testing::Values("", "no_translation", "no_bilinear", "single_space",
                                           "no_sentence_inference", "flat_document"),
                         [](const auto& info) { return info.param.empty() ? std::string("full") : info.param; });

TEST(Model, AblatedEntityBlocksAreZero) {
  auto data = tiny_data(1, 2);
  for (const char* flag : {"no_translation", "no_bilinear"}) {
    ModelConfig cfg = data.config;
    set_ablation(cfg.ablations, flag);
    HinModel model(cfg, 1);
    randomize(model, 1);
    Split split = prepare_split(data.corpus.documents, data.vocab, cfg);
    Tape tape;
    Context ctx{tape, false, false};
    auto enc = model.encode(ctx, split.inputs[0]);
    auto f = model.forward_pair(ctx, enc, split.inputs[0], 0, 1);
    const std::size_t ds = cfg.effective_subspace_dim();
    const std::size_t offset = std::string(flag) == "no_bilinear" ? 0 : ds;
    for (std::size_t k = 0; k < cfg.effective_subspaces(); ++k)
      for (std::size_t i = 0; i < ds; ++i) EXPECT_EQ(f.entity.blocks.value()[k * 4 * ds + offset + i], 0.0) << flag;
  }
}

TEST(Model, EncodingSharesDocumentLevelWork) {
  auto data = tiny_data(1, 4);
  HinModel model(data.config, 2);
  Split split = prepare_split(data.corpus.documents, data.vocab, data.config);
  Tape tape;
  Context ctx{tape, false, false};
  auto enc = model.encode(ctx, split.inputs[0]);
  EXPECT_EQ(enc.sentence_states.size(), split.inputs[0].sentences());
  ASSERT_TRUE(enc.sentence_vectors.has_value());
  EXPECT_EQ(enc.sentence_vectors->value().shape(), (Shape{split.inputs[0].sentences(), data.config.d()}));
  EXPECT_THROW(model.forward_pair(ctx, enc, split.inputs[0], 1, 1), ConfigError);
  EXPECT_THROW(model.forward_pair(ctx, enc, split.inputs[0], 0, 99), IndexError);

  ModelConfig flat = data.config;
  flat.ablations.flat_document = true;
  HinModel flat_model(flat, 2);
  auto flat_enc = flat_model.encode(ctx, split.inputs[0]);
  EXPECT_FALSE(flat_enc.sentence_vectors.has_value());
  EXPECT_THROW(flat_model.sentence_inference(ctx, flat_enc, flat_enc.token_states), ConfigError);
}

TEST(Model, PretrainedRowsReplaceInitialisation) {
  auto data = tiny_data(1, 4);
  Tensor table(Shape{data.config.vocab_size, data.config.word_dim}, 0.25);
  std::vector<bool> mask(data.config.vocab_size, false);
  mask[2] = true;
  HinModel model(data.config, 1, &table, &mask);
  const Tensor& w = model.params().at("embed.word").value;
  EXPECT_EQ(w.at(2, 0), 0.25);
  EXPECT_NE(w.at(3, 0), 0.25);
  Tensor wrong(Shape{1, 1});
  EXPECT_THROW(HinModel(data.config, 1, &wrong), ConfigError);
}

TEST(Model, SameSeedSameParameters) {
  auto data = tiny_data(1, 4);
  HinModel a(data.config, 9), b(data.config, 9), c(data.config, 10);
  EXPECT_EQ(a.params().snapshot(), b.params().snapshot());
  EXPECT_NE(a.params().snapshot(), c.params().snapshot());
}

class GradcheckVariant : public ::testing::TestWithParam<std::string> {};

TEST_P(GradcheckVariant, EveryParameterPasses) {
  cli::GradcheckArgs args;
  if (!GetParam().empty()) args.ablate = {GetParam()};
  auto run = cli::run_gradcheck(args);
  EXPECT_TRUE(run.report.failing(1e-4).empty()) << cli::gradcheck_table(run.report, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Ablations, GradcheckVariant,
                         ::testing::Values("no_translation", "no_bilinear", "single_space",
                                           "no_sentence_inference", "flat_document"));

}  // namespace
}  // namespace hin

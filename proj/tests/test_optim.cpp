#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

namespace hin {
namespace {

ParameterSet two_params() {
  ParameterSet p;
  p.add("a", Shape{2}).value = Tensor::vector({1.0, -2.0});
  p.add("b", Shape{1}).value = Tensor::vector({0.5});
  return p;
}

TEST(Adam, ZeroGradientLeavesValues) {
  ParameterSet p = two_params();
  p.zero_grad();
  AdamState s(p);
  AdamConfig cfg;
  cfg.lr = 0.1;
  adam_step(p, s, cfg);
  EXPECT_EQ(p.at("a").value, Tensor::vector({1.0, -2.0}));
  EXPECT_EQ(s.t, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // After bias correction m_hat = g and v_hat = g^2, so the step is
  // lr * g / (|g| + eps).
  ParameterSet p = two_params();
  p.zero_grad();
  p.at("a").grad = Tensor::vector({0.3, -4.0});
  p.at("b").grad = Tensor::vector({1e-3});
  AdamState s(p);
  AdamConfig cfg;
  cfg.lr = 0.01;
  adam_step(p, s, cfg);
  EXPECT_NEAR(p.at("a").value[0], 1.0 - 0.01 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(p.at("a").value[1], -2.0 + 0.01 * 4.0 / (4.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p.at("b").value[0], 0.5 - 0.01 * 1e-3 / (1e-3 + 1e-8), 1e-15);
}

TEST(Adam, TwoStepsMatchHandIteration) {
  ParameterSet p;
  p.add("w", Shape{1}).value = Tensor::vector({0.0});
  AdamState s(p);
  AdamConfig cfg;
  cfg.lr = 0.5;
  double m = 0, v = 0, w = 0;
  const double grads[] = {2.0, -1.0};
  for (int t = 1; t <= 2; ++t) {
    p.at("w").grad = Tensor::vector({grads[t - 1]});
    adam_step(p, s, cfg);
    const double g = grads[t - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    w -= 0.5 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(p.at("w").value[0], w, 1e-14) << "step " << t;
  }
}

TEST(Adam, ZeroLearningRateIsIdentity) {
  ParameterSet p = two_params();
  p.at("a").grad = Tensor::vector({1.0, 1.0});
  p.at("b").grad = Tensor::vector({1.0});
  AdamState s(p);
  AdamConfig cfg;
  cfg.lr = 0.0;
  const auto before = p.snapshot();
  adam_step(p, s, cfg);
  EXPECT_EQ(p.snapshot(), before);
}

TEST(Adam, MissingGradientIsNamed) {
  ParameterSet p = two_params();
  p.at("a").grad = Tensor::vector({1.0, 1.0});
  p.at("b").grad = Tensor();
  AdamState s(p);
  try {
    adam_step(p, s, AdamConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos);
  }
  EXPECT_EQ(s.t, 0u);
}

TEST(Adam, FrozenParametersAreSkipped) {
  ParameterSet p = two_params();
  p.at("b").frozen = true;
  p.at("b").grad = Tensor();
  p.at("a").grad = Tensor::vector({1.0, 1.0});
  AdamState s(p);
  AdamConfig cfg;
  cfg.lr = 0.1;
  adam_step(p, s, cfg);
  EXPECT_EQ(p.at("b").value[0], 0.5);
  EXPECT_NE(p.at("a").value[0], 1.0);
}

TEST(Adam, ConfigValidation) {
  AdamConfig c;
  c.beta1 = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = AdamConfig{};
  c.lr = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = AdamConfig{};
  c.eps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

}  // namespace
}  // namespace hin

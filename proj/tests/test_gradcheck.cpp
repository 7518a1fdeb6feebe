#include <gtest/gtest.h>

#include "support.hpp"

namespace hin {
namespace {

using ad::Tape;
using ad::Var;

struct SmallNet {
  ParameterSet params;
  SmallNet() {
    SeedStream rng = SeedStream::derive(4, "init");
    init_uniform(params.add("w", Shape{3, 4}).value, 4, rng);
    init_uniform(params.add("b", Shape{3}).value, 1, rng);
    init_uniform(params.add("u", Shape{3}).value, 3, rng);
  }
  LossFn loss() {
    return [this](Tape& t) {
      Var x = t.constant(Tensor::vector({0.3, -0.7, 1.1, 0.2}));
      Var h = ad::tanh(ad::affine(x, t.param(params.at("w")), t.param(params.at("b"))));
      return ad::sum(ad::mul(h, t.param(params.at("u"))));
    };
  }
};

TEST(GradCheck, CorrectGradientsPass) {
  SmallNet net;
  GradCheckReport r = finite_diff_check(net.params, net.loss());
  ASSERT_EQ(r.entries.size(), 3u);
  EXPECT_LT(r.worst(), 1e-6);
  EXPECT_TRUE(r.failing(1e-4).empty());
  EXPECT_EQ(r.entries[0].probes, 12u);
}

TEST(GradCheck, InjectedFaultIsNamed) {
  SmallNet net;
  GradCheckOptions opt;
  opt.fault_op = "tanh";
  GradCheckReport r = finite_diff_check(net.params, net.loss(), opt);
  auto failing = r.failing(1e-4);
  // Only parameters upstream of tanh see the corrupted rule.
  EXPECT_EQ(failing, (std::vector<std::string>{"w", "b"}));
}

TEST(GradCheck, RejectsStepOutsideRange) {
  SmallNet net;
  GradCheckOptions opt;
  opt.eps = 1e-2;
  EXPECT_THROW(finite_diff_check(net.params, net.loss(), opt), ConfigError);
  opt.eps = 1e-9;
  EXPECT_THROW(finite_diff_check(net.params, net.loss(), opt), ConfigError);
}

TEST(GradCheck, NanLossIsAnError) {
  ParameterSet p;
  p.add("w", Shape{1}).value[0] = -1.0;
  LossFn f = [&](Tape& t) {
    Var w = t.param(p.at("w"));
    Tensor v = w.value();
    v[0] = std::sqrt(v[0]);
    return ad::sum(ad::mul(w, t.constant(v)));
  };
  EXPECT_THROW(finite_diff_check(p, f), Error);
}

TEST(GradCheck, ProbesNearReluKinkAreRetriedOrSkipped) {
  ParameterSet p;
  // 1e-7 sits inside the default step, so the first probe straddles the kink.
  p.add("w", Shape{2}).value = Tensor::vector({1e-7, 0.5});
  LossFn f = [&](Tape& t) { return ad::sum(ad::relu(t.param(p.at("w")))); };
  GradCheckReport r = finite_diff_check(p, f);
  EXPECT_LT(r.worst(), 1e-8);
  EXPECT_EQ(r.entries[0].probes + r.entries[0].skipped, 2u);
}

TEST(GradCheck, LargeTensorsAreSampled) {
  ParameterSet p;
  SeedStream rng = SeedStream::derive(1, "init");
  init_uniform(p.add("big", Shape{300}).value, 1, rng);
  LossFn f = [&](Tape& t) {
    Var w = t.param(p.at("big"));
    return ad::sum(ad::mul(w, w));
  };
  GradCheckOptions opt;
  opt.max_probes = 20;
  GradCheckReport r = finite_diff_check(p, f, opt);
  EXPECT_EQ(r.entries[0].probes, 20u);
  EXPECT_LT(r.worst(), 1e-7);
}

TEST(GradCheck, FrozenParametersAreNotProbed) {
  SmallNet net;
  net.params.at("u").frozen = true;
  GradCheckReport r = finite_diff_check(net.params, net.loss());
  EXPECT_EQ(r.entries.size(), 2u);
}

}  // namespace
}  // namespace hin

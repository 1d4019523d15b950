#include <gtest/gtest.h>

#include "ftwa/errors.hpp"
#include "ftwa/ops.hpp"
#include "ftwa/raft.hpp"
#include "support/oracles.hpp"

namespace oracle = ftwa::testing;

using namespace ftwa;

namespace {

Var<double> random_map(Shape shape, std::uint64_t seed, bool leaf = false) {
  oracle::Gen gen(seed);
  Tensor<double> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = gen.normal();
  return leaf ? Var<double>::leaf(t) : Var<double>::constant(t);
}

Var<double> from_values(std::vector<double> v, bool leaf = false) {
  const Shape shape{1, static_cast<int>(v.size()), 1, 1};
  Tensor<double> t(shape, std::move(v));
  return leaf ? Var<double>::leaf(t) : Var<double>::constant(t);
}

RaftConfig small_raft() {
  RaftConfig c;
  c.channels = 16;
  c.width = 8;
  return c;
}

}  // namespace

TEST(ChannelSplit, HalvesAndRejectsOddCounts) {
  const Var<double> x = random_map({2, 6, 3, 2}, 1);
  const auto [a, b] = channel_split(x);
  EXPECT_EQ(a.shape(), (Shape{2, 3, 3, 2}));
  EXPECT_EQ(b.shape(), (Shape{2, 3, 3, 2}));
  EXPECT_EQ(a.value().at(1, 2, 2, 1), x.value().at(1, 2, 2, 1));
  EXPECT_EQ(b.value().at(1, 0, 0, 0), x.value().at(1, 3, 0, 0));
  EXPECT_THROW(channel_split(random_map({1, 5, 2, 2}, 2)), ShapeError);
}

TEST(RaftConfigTest, WidthFollowsBackbone) {
  EXPECT_EQ(RaftConfig::for_backbone(BackboneConfig::tiny()).width, 16);
  EXPECT_EQ(RaftConfig::for_backbone(BackboneConfig::tiny()).channels, 256);
  EXPECT_EQ(RaftConfig::for_backbone(BackboneConfig::paper_scale()).width, 64);
  EXPECT_EQ(RaftConfig::for_backbone(BackboneConfig::paper_scale()).channels, 2048);
  RaftBlockConfig odd;
  odd.channels = 7;
  EXPECT_THROW(odd.validate(), ShapeError);
  RaftConfig none = small_raft();
  none.num_blocks = 0;
  EXPECT_THROW(none.validate(), ConfigError);
}

TEST(RaftTransform, PreservesShape) {
  Rng rng(3);
  const Raft<double> raft(small_raft(), rng);
  for (Shape s : {Shape{1, 16, 4, 2}, Shape{3, 16, 8, 4}, Shape{2, 16, 1, 1}}) {
    EXPECT_EQ(raft.transform(random_map(s, 4)).shape(), s);
  }
  EXPECT_THROW(raft.transform(random_map({1, 8, 4, 2}, 5)), ShapeError);
}

TEST(RaftTransform, TinyBackboneShape) {
  Rng rng(1);
  const Raft<float> raft(RaftConfig::for_backbone(BackboneConfig::tiny()), rng);
  Tensor<float> t(Shape{2, 256, 8, 4}, 0.1f);
  EXPECT_EQ(raft.transform(Var<float>::constant(t)).shape(), t.shape());
}

// Every stage is a biased linear map followed by a positively homogeneous
// activation, so with all biases cleared a zero map stays zero.
TEST(RaftTransform, ZeroMapWithoutBiasesIsFixed) {
  Rng rng(6);
  Raft<double> raft(small_raft(), rng);
  ParameterSet<double> set;
  raft.collect("raft", set);
  for (auto& p : set.parameters) {
    if (p.name.ends_with(".bias")) p.var.mutable_value().fill(0.0);
  }
  const Var<double> y = raft.transform(Var<double>::constant(Tensor<double>(Shape{2, 16, 3, 3})));
  for (double v : y.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(RaftTransform, ZeroTailReducesToGlobalResidual) {
  Rng rng(7);
  Raft<double> raft(small_raft(), rng);
  raft.tail_out().weight().mutable_value().fill(0.0);
  raft.tail_out().bias().mutable_value().fill(0.0);
  const Var<double> x = random_map({2, 16, 4, 2}, 8);
  const Tensor<double> a = raft.transform(x).value();
  const Tensor<double> b = raft.global_residual(x).value();
  EXPECT_LE(max_abs_diff(a, b), 1e-12);
}

TEST(RaftBlockTest, GateIsStrictlyInsideUnitInterval) {
  Rng rng(9);
  Raft<double> raft(small_raft(), rng);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Var<double> g = raft.blocks()[0].gate(random_map({2, 8, 4, 2}, seed));
    EXPECT_EQ(g.shape(), (Shape{2, 8, 1, 1}));
    for (double v : g.value().values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(RaftParams, SmallRelativeToBackbone) {
  for (const BackboneConfig& bc : {BackboneConfig::tiny(), BackboneConfig::paper_scale()}) {
    Rng rng(1);
    const Raft<float> raft(RaftConfig::for_backbone(bc), rng);
    Backbone<float> backbone(bc, 0);
    ParameterSet<float> set;
    backbone.collect("backbone", set);
    EXPECT_LE(static_cast<double>(raft.parameter_count()) / static_cast<double>(set.parameter_count()), 0.10);
  }
}

TEST(RaftTags, OnlyLowResolutionInputs) {
  Rng rng(2);
  const Raft<double> raft(small_raft(), rng);
  const Var<double> x = random_map({1, 16, 2, 2}, 3);
  EXPECT_EQ(raft(FeatureMap<double>{x, StreamTag::kLr}).tag, StreamTag::kSynthHr);
  EXPECT_EQ(raft(FeatureMap<double>{x, StreamTag::kSynthLr}).tag, StreamTag::kSynthHr);
  EXPECT_THROW(raft(FeatureMap<double>{x, StreamTag::kHr}), ContractError);
  EXPECT_THROW(raft(FeatureMap<double>{x, StreamTag::kSynthHr}), ContractError);
}

TEST(RaftLoss, MeanAbsoluteDifference) {
  const FeatureMap<double> hr{from_values({1, 2, 3, 4}), StreamTag::kHr};
  const FeatureMap<double> out{from_values({1, 1, 3, 3}), StreamTag::kSynthHr};
  EXPECT_DOUBLE_EQ(raft_loss(hr, out).value().item(), 0.5);
  EXPECT_DOUBLE_EQ(raft_loss(out, hr).value().item(), 0.5);
}

TEST(RaftLoss, SymmetricAndZeroOnEqualMaps) {
  oracle::Gen gen(10);
  for (int c = 0; c < 50; ++c) {
    const Shape s{gen.integer(1, 3), 2 * gen.integer(1, 4), gen.integer(1, 3), gen.integer(1, 3)};
    const FeatureMap<double> a{random_map(s, 100 + c), StreamTag::kHr};
    const FeatureMap<double> b{random_map(s, 200 + c), StreamTag::kSynthHr};
    EXPECT_DOUBLE_EQ(raft_loss(a, b).value().item(), raft_loss(b, a).value().item());
    EXPECT_GE(raft_loss(a, b).value().item(), 0.0);
    EXPECT_EQ(raft_loss(a, a).value().item(), 0.0);
  }
  const FeatureMap<double> a{random_map({1, 4, 2, 2}, 1), StreamTag::kHr};
  const FeatureMap<double> b{random_map({1, 4, 2, 1}, 2), StreamTag::kSynthHr};
  EXPECT_THROW(raft_loss(a, b), ShapeError);
}

TEST(RaftLoss, TargetIsDetachedByDefault) {
  for (bool detach : {true, false}) {
    const FeatureMap<double> hr{from_values({1, 2, 3, 4}, true), StreamTag::kHr};
    const FeatureMap<double> out{from_values({0, 0, 0, 0}, true), StreamTag::kSynthHr};
    backward(raft_loss(hr, out, detach));
    EXPECT_EQ(hr.values.has_grad(), !detach);
    ASSERT_TRUE(out.values.has_grad());
    for (double g : out.values.grad().values()) EXPECT_DOUBLE_EQ(g, -0.25);
  }
}

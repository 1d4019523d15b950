#include <gtest/gtest.h>

#include <cmath>

#include "ftwa/backbone.hpp"
#include "ftwa/errors.hpp"
#include "ftwa/ops.hpp"
#include "support/oracles.hpp"

namespace oracle = ftwa::testing;

using namespace ftwa;

namespace {

Var<float> random_images(int n, ImageSize size, std::uint64_t seed) {
  oracle::Gen gen(seed);
  Tensor<float> t(Shape{n, 3, size.height, size.width});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(gen.normal());
  return Var<float>::constant(t);
}

// Parameters of a ResNet stack counted by hand: conv weights are bias-free,
// every batch norm carries a scale and a shift.
std::size_t conv(int in, int out, int k) { return static_cast<std::size_t>(in) * out * k * k; }
std::size_t bn(int c) { return 2 * static_cast<std::size_t>(c); }

std::size_t block_params(int in, int out, int stride, bool bottleneck) {
  std::size_t n = 0;
  if (bottleneck) {
    const int mid = out / 4;
    n = conv(in, mid, 1) + conv(mid, mid, 3) + conv(mid, out, 1) + bn(mid) * 2 + bn(out);
  } else {
    n = conv(in, out, 3) + conv(out, out, 3) + bn(out) * 2;
  }
  if (stride != 1 || in != out) n += conv(in, out, 1) + bn(out);
  return n;
}

std::size_t expected_params(const BackboneConfig& c) {
  const bool bottleneck = c.variant == BackboneVariant::kPaperScale;
  const int stem = bottleneck ? 64 : c.stage_channels[0];
  std::size_t shallow = conv(3, stem, bottleneck ? 7 : 3) + bn(stem);
  int in = stem;
  for (int b = 0; b < c.blocks_per_stage[0]; ++b) {
    shallow += block_params(in, c.stage_channels[0], 1, bottleneck);
    in = c.stage_channels[0];
  }
  std::size_t deep = 0;
  for (int s = 1; s < 4; ++s) {
    const int stride = s == 3 ? c.last_stage_stride : 2;
    for (int b = 0; b < c.blocks_per_stage[s]; ++b) {
      deep += block_params(in, c.stage_channels[s], b == 0 ? stride : 1, bottleneck);
      in = c.stage_channels[s];
    }
  }
  return (c.two_stream ? 2 : 1) * shallow + deep;
}

}  // namespace

TEST(BackboneShapes, TinyTrace) {
  Backbone<float> net(BackboneConfig::tiny(), 1);
  const Var<float> x = random_images(2, {64, 32}, 3);
  const Var<float> s = net.shallow(x, Stream::kHr, false);
  EXPECT_EQ(s.shape(), (Shape{2, 32, 32, 16}));
  const Var<float> f = net.deep(s, false);
  EXPECT_EQ(f.shape(), (Shape{2, 256, 8, 4}));
  EXPECT_EQ(BackboneConfig::tiny().feature_shape(), (Shape{1, 256, 8, 4}));
}

TEST(BackboneShapes, LastStageStrideHalvesTheMap) {
  BackboneConfig c = BackboneConfig::tiny();
  c.last_stage_stride = 2;
  EXPECT_EQ(c.feature_shape(), (Shape{1, 256, 4, 2}));
  Backbone<float> net(c, 1);
  EXPECT_EQ(net.forward(random_images(1, {64, 32}, 4), Stream::kLr, StreamTag::kLr, false).values.shape(),
            (Shape{1, 256, 4, 2}));
}

TEST(BackboneShapes, PaperScaleTrace) {
  const BackboneConfig c = BackboneConfig::paper_scale();
  EXPECT_EQ(c.input_size, (ImageSize{256, 128}));
  EXPECT_EQ(c.feature_shape(), (Shape{1, 2048, 16, 8}));
  EXPECT_EQ(c.embedding_dim(), 2048);
}

TEST(BackboneParams, MatchHandCount) {
  for (BackboneConfig c : {BackboneConfig::tiny(), BackboneConfig::paper_scale()}) {
    for (bool two : {true, false}) {
      c.two_stream = two;
      Backbone<float> net(c, 0);
      ParameterSet<float> set;
      net.collect("backbone", set);
      EXPECT_EQ(set.parameter_count(), expected_params(c));
      EXPECT_EQ(set.has_namespace("backbone.e_l."), two);
    }
  }
}

TEST(BackboneParams, TinyIsSmall) {
  Backbone<float> net(BackboneConfig::tiny(), 0);
  ParameterSet<float> set;
  net.collect("backbone", set);
  EXPECT_LT(set.parameter_count(), 2'000'000u);
}

TEST(BackboneParams, StreamsAreIndependentlyInitialized) {
  Backbone<float> net(BackboneConfig::tiny(), 0);
  ParameterSet<float> set;
  net.collect("backbone", set);
  const auto* h = set.find("backbone.e_h.stem.conv.weight");
  const auto* l = set.find("backbone.e_l.stem.conv.weight");
  ASSERT_NE(h, nullptr);
  ASSERT_NE(l, nullptr);
  EXPECT_NE(h->var.value().data(), l->var.value().data());
  EXPECT_FALSE(std::ranges::equal(h->var.value().values(), l->var.value().values()));
}

TEST(BackboneOutputs, FiniteOverSeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Backbone<float> net(BackboneConfig::tiny(), seed);
    const auto f = net.forward(random_images(1, {64, 32}, seed + 1000), seed % 2 ? Stream::kLr : Stream::kHr,
                               StreamTag::kHr, seed % 3 == 0);
    ASSERT_TRUE(all_finite(f.values.value())) << "seed " << seed;
  }
}

TEST(BackboneOutputs, DeterministicInSeed) {
  Backbone<float> a(BackboneConfig::tiny(), 5), b(BackboneConfig::tiny(), 5);
  const Var<float> x = random_images(2, {64, 32}, 6);
  EXPECT_TRUE(std::ranges::equal(a.forward(x, Stream::kHr, StreamTag::kHr, false).values.value().values(),
                                 b.forward(x, Stream::kHr, StreamTag::kHr, false).values.value().values()));
}

// An HR image never flows through E_L, so E_L receives no gradient at all.
TEST(BackboneRouting, HrForwardLeavesELWithoutGradient) {
  Backbone<double> net(BackboneConfig::tiny(), 2);
  ParameterSet<double> set;
  net.collect("backbone", set);
  Tensor<double> t(Shape{2, 3, 64, 32});
  oracle::Gen gen(8);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = gen.normal();
  const auto f = net.forward(Var<double>::constant(t), Stream::kHr, StreamTag::kHr, true);
  backward(ops::mean(f.values));
  bool eh_has_grad = false;
  for (const auto& p : set.parameters) {
    if (p.name.starts_with("backbone.e_l.")) {
      EXPECT_FALSE(p.var.has_grad()) << p.name;
    }
    if (p.name.starts_with("backbone.e_h.") && p.var.has_grad()) eh_has_grad = true;
  }
  EXPECT_TRUE(eh_has_grad);
}

TEST(BackboneEncode, TagsAndSizeCheck) {
  Backbone<float> net(BackboneConfig::tiny(), 1);
  ImageRecord r;
  r.image = Image(64, 32, 0.5f);
  EXPECT_EQ(net.encode(r, Stream::kHr).tag, StreamTag::kHr);
  EXPECT_EQ(net.encode(r, Stream::kLr).tag, StreamTag::kLr);
  r.paired_view = true;
  EXPECT_EQ(net.encode(r, Stream::kLr).tag, StreamTag::kSynthLr);
  r.image = Image(32, 16, 0.5f);
  EXPECT_THROW(net.encode(r, Stream::kHr), ShapeError);
}

TEST(BackboneConfigValidation, RejectsMalformedStages) {
  BackboneConfig c = BackboneConfig::tiny();
  c.stage_channels = {32, 64, 128};
  EXPECT_THROW(c.validate(), ConfigError);
  c = BackboneConfig::paper_scale();
  c.stage_channels[1] = 514;
  EXPECT_THROW(c.validate(), ConfigError);
}

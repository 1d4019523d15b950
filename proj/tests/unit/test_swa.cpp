#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "ftwa/errors.hpp"
#include "ftwa/ops.hpp"
#include "ftwa/swa.hpp"
#include "support/oracles.hpp"

namespace oracle = ftwa::testing;

using namespace ftwa;

namespace {

Var<double> column(std::vector<double> v, bool leaf = false) {
  const Shape shape{static_cast<int>(v.size()), 1, 1, 1};
  Tensor<double> t(shape, std::move(v));
  return leaf ? Var<double>::leaf(t) : Var<double>::constant(t);
}

Var<double> scalar(double v) { return column({v}); }

Var<double> rows(const oracle::Vectors& v) {
  const int n = static_cast<int>(v.size());
  const int d = static_cast<int>(v[0].size());
  Tensor<double> t(Shape{n, d, 1, 1});
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < d; ++k) t.at(i, k) = v[i][k];
  }
  return Var<double>::constant(t);
}

// Weighted classification loss written out per sample.
double cls_oracle(const StreamQuad<double>& w, const StreamQuad<double>& l) {
  return (w.hr * l.hr + w.synth_lr * l.synth_lr) / (w.hr + w.synth_lr) +
         (w.lr * l.lr + w.synth_hr * l.synth_hr) / (w.lr + w.synth_hr);
}

double tri_oracle(const StreamQuad<double>& w, double l_hr, double l_lr) {
  const double a = w.hr * w.synth_hr, b = w.lr * w.synth_lr;
  return (a * l_hr + b * l_lr) / (a + b);
}

double swa_cls(const StreamQuad<double>& w, const StreamQuad<double>& l) {
  return swa_cls_loss<double>({scalar(w.hr), scalar(w.lr), scalar(w.synth_hr), scalar(w.synth_lr)},
                              {scalar(l.hr), scalar(l.lr), scalar(l.synth_hr), scalar(l.synth_lr)})
      .value()
      .item();
}

double swa_tri(const StreamQuad<double>& w, double l_hr, double l_lr) {
  return swa_triplet_combine<double>({scalar(w.hr), scalar(w.lr), scalar(w.synth_hr), scalar(w.synth_lr)},
                                     scalar(l_hr), scalar(l_lr))
      .value()
      .item();
}

}  // namespace

TEST(GapFlatten, MeansAndKeepsTag) {
  Tensor<double> t(Shape{1, 2, 2, 2}, std::vector<double>{1, 2, 3, 4, 5, 5, 5, 5});
  const ReidVectors<double> v = gap_flatten(FeatureMap<double>{Var<double>::constant(t), StreamTag::kSynthHr});
  EXPECT_EQ(v.values.shape(), (Shape{1, 2, 1, 1}));
  EXPECT_DOUBLE_EQ(v.values.value()[0], 2.5);
  EXPECT_DOUBLE_EQ(v.values.value()[1], 5.0);
  EXPECT_EQ(v.tag, StreamTag::kSynthHr);
}

TEST(ClsLoss, ClosedForms) {
  Tensor<double> t(Shape{2, 2, 1, 1}, std::vector<double>{1, 2, 1, 2});
  const std::vector<int> labels{0, 1};
  const Var<double> l = cls_loss(Var<double>::constant(t), labels);
  EXPECT_NEAR(l.value()[0], std::log(1 + std::exp(1.0)), 1e-12);  // 1.3133
  EXPECT_NEAR(l.value()[1], std::log(1 + std::exp(-1.0)), 1e-12);  // 0.3133
  EXPECT_NEAR(l.value()[1], 0.31326168751822286, 1e-12);
}

TEST(ClsLoss, UniformAndSaturated) {
  for (int n : {2, 5, 17}) {
    const std::vector<int> y{n - 1};
    EXPECT_NEAR(cls_loss(Var<double>::constant(Tensor<double>(Shape{1, n, 1, 1}, 0.7)), y).value().item(),
                std::log(static_cast<double>(n)), 1e-12);
  }
  Tensor<double> t(Shape{1, 4, 1, 1});
  t[2] = 1e6;
  const std::vector<int> y{2};
  EXPECT_NEAR(cls_loss(Var<double>::constant(t), y).value().item(), 0.0, 1e-12);
  const std::vector<int> bad{4};
  EXPECT_THROW(cls_loss(Var<double>::constant(t), bad), LabelError);
}

TEST(SwaClsLoss, WorkedExample) {
  const StreamQuad<double> w{0.8, 0.5, 0.5, 0.2};
  const StreamQuad<double> l{1, 2, 4, 3};
  EXPECT_NEAR(swa_cls(w, l), 4.4, 1e-12);
  EXPECT_NEAR(cls_oracle(w, l), 4.4, 1e-12);
}

TEST(SwaClsLoss, PropertiesOnRandomCases) {
  oracle::Gen gen(21);
  for (int c = 0; c < 300; ++c) {
    const StreamQuad<double> w{gen.real(0.01, 1), gen.real(0.01, 1), gen.real(0.01, 1), gen.real(0.01, 1)};
    const StreamQuad<double> l{gen.real(0, 5), gen.real(0, 5), gen.real(0, 5), gen.real(0, 5)};
    const double base = swa_cls(w, l);
    ASSERT_NEAR(base, cls_oracle(w, l), 1e-12);

    const double k = gen.real(0.1, 10);
    ASSERT_NEAR(swa_cls({w.hr * k, w.lr, w.synth_hr, w.synth_lr * k}, l), base, 1e-10);
    ASSERT_NEAR(swa_cls({w.hr, w.lr * k, w.synth_hr * k, w.synth_lr}, l), base, 1e-10);

    const double e = gen.real(0.3, 0.9);
    ASSERT_NEAR(swa_cls({e, e, e, e}, l), (l.hr + l.synth_lr) / 2 + (l.lr + l.synth_hr) / 2, 1e-12);

    const double first = (w.hr * l.hr + w.synth_lr * l.synth_lr) / (w.hr + w.synth_lr);
    ASSERT_GE(first, std::min(l.hr, l.synth_lr) - 1e-12);
    ASSERT_LE(first, std::max(l.hr, l.synth_lr) + 1e-12);
  }
  // Rescaling a single weight is not an invariance.
  EXPECT_GT(std::abs(swa_cls({0.4, 0.5, 0.5, 0.5}, {1, 2, 3, 4}) - swa_cls({0.8, 0.5, 0.5, 0.5}, {1, 2, 3, 4})),
            1e-3);
}

TEST(SwaClsLoss, BatchMean) {
  const Var<double> w = column({0.5, 0.5});
  const Var<double> v = swa_cls_loss<double>({w, w, w, w}, {column({1, 3}), column({1, 3}), column({1, 3}),
                                                             column({1, 3})});
  EXPECT_DOUBLE_EQ(v.value().item(), 4.0);
}

TEST(SwaClsLoss, RejectsNonPositiveWeights) {
  for (double bad : {0.0, -0.3, std::numeric_limits<double>::quiet_NaN()}) {
    EXPECT_THROW(swa_cls({bad, 0.5, 0.5, 0.5}, {1, 1, 1, 1}), ContractError);
    EXPECT_THROW(swa_tri({0.5, 0.5, bad, 0.5}, 1, 1), ContractError);
  }
}

TEST(SwaTripletCombine, WorkedExampleAndInvariances) {
  EXPECT_NEAR(swa_tri({0.5, 1, 0.5, 1}, 2, 4), 3.6, 1e-12);
  oracle::Gen gen(22);
  for (int c = 0; c < 300; ++c) {
    const StreamQuad<double> w{gen.real(0.01, 1), gen.real(0.01, 1), gen.real(0.01, 1), gen.real(0.01, 1)};
    const double lh = gen.real(0, 2), ll = gen.real(0, 2);
    const double base = swa_tri(w, lh, ll);
    ASSERT_NEAR(base, tri_oracle(w, lh, ll), 1e-12);
    const double k = gen.real(0.1, 10);
    ASSERT_NEAR(swa_tri({w.hr * k, w.lr * k, w.synth_hr * k, w.synth_lr * k}, lh, ll), base, 1e-12);
    const double e = gen.real(0.1, 1);
    ASSERT_NEAR(swa_tri({e, e, e, e}, lh, ll), (lh + ll) / 2, 1e-12);
  }
}

TEST(TripletLoss, IdenticalVectorsGiveMargin) {
  const Var<double> v = rows(oracle::Vectors(6, std::vector<double>{0.3, -1.0, 2.0}));
  const std::vector<int> y{0, 0, 0, 1, 1, 1};
  for (auto mining : {TripletMining::kBatchAll, TripletMining::kBatchHard}) {
    const auto r = triplet_loss(v, y, 0.3, mining);
    EXPECT_NEAR(r.loss.value().item(), 0.3, 1e-12);
    EXPECT_FALSE(r.degenerate);
  }
}

TEST(TripletLoss, SeparatedClustersGiveZero) {
  const Var<double> v = rows({{0, 0}, {0, 0}, {5, 5}, {5, 5}});
  const std::vector<int> y{0, 0, 1, 1};
  const auto r = triplet_loss(v, y, 0.3);
  EXPECT_EQ(r.loss.value().item(), 0.0);
  EXPECT_EQ(r.valid_triplets, 8u);
}

TEST(TripletLoss, PlaneExampleMatchesEnumeration) {
  const oracle::Vectors pts{{0, 0}, {1, 0}, {0.5, 0.2}, {2, 1}};
  const std::vector<int> y{0, 0, 1, 1};
  EXPECT_NEAR(triplet_loss(rows(pts), y, 0.3).loss.value().item(), oracle::brute_triplet(pts, y, 0.3), 1e-12);
}

TEST(TripletLoss, MatchesEnumerationOnRandomBatches) {
  oracle::Gen gen(23);
  for (int c = 0; c < 300; ++c) {
    const int n = gen.integer(2, 8);
    const auto v = gen.vectors(n, gen.integer(1, 5), gen.real(0.05, 2));
    const auto y = gen.labels(n, gen.integer(1, 4));
    const double m = gen.real(0, 1);
    const auto mining = c % 2 ? TripletMining::kBatchHard : TripletMining::kBatchAll;
    ASSERT_NEAR(triplet_loss(rows(v), y, m, mining).loss.value().item(), oracle::brute_triplet(v, y, m, mining),
                1e-10);
  }
}

TEST(TripletLoss, DegenerateBatchIsFlagged) {
  const Var<double> v = rows({{0, 1}, {1, 0}, {2, 2}});
  for (const std::vector<int>& y : {std::vector<int>{0, 0, 0}, std::vector<int>{0, 1, 2}}) {
    const auto r = triplet_loss(v, y, 0.3);
    EXPECT_TRUE(r.degenerate);
    EXPECT_EQ(r.valid_triplets, 0u);
    EXPECT_EQ(r.loss.value().item(), 0.0);
  }
  const std::vector<int> short_labels{0, 1};
  EXPECT_THROW(triplet_loss(v, short_labels, 0.3), ShapeError);
}

TEST(SwaTripletLoss, UnionMiningAndBatchWeights) {
  oracle::Gen gen(24);
  const auto hr = gen.vectors(4, 3), shr = gen.vectors(4, 3), lr = gen.vectors(4, 3), slr = gen.vectors(4, 3);
  const std::vector<int> y{0, 0, 1, 1};
  const StreamQuad<Var<double>> w{column({0.2, 0.4, 0.6, 0.8}), column({0.5, 0.5, 0.5, 0.5}),
                                  column({0.9, 0.7, 0.5, 0.3}), column({0.1, 0.2, 0.3, 0.4})};
  const double got =
      swa_triplet_loss<double>(w, {rows(hr), rows(lr), rows(shr), rows(slr)}, {y, y, y, y}, 0.3).value().item();

  oracle::Vectors hr_union = hr, lr_union = lr;
  hr_union.insert(hr_union.end(), shr.begin(), shr.end());
  lr_union.insert(lr_union.end(), slr.begin(), slr.end());
  std::vector<int> yy = y;
  yy.insert(yy.end(), y.begin(), y.end());
  const double expect = tri_oracle({0.5, 0.5, 0.6, 0.25}, oracle::brute_triplet(hr_union, yy, 0.3),
                                   oracle::brute_triplet(lr_union, yy, 0.3));
  EXPECT_NEAR(got, expect, 1e-12);
}

TEST(TotalLoss, DefaultsZeroAndLinearity) {
  const LossWeights defaults;
  EXPECT_NEAR(total_loss(scalar(1), scalar(1), scalar(1), defaults).value().item(), 4.1, 1e-12);
  EXPECT_EQ(total_loss(scalar(1), scalar(2), scalar(3), LossWeights{0, 0, 0, 0.3}).value().item(), 0.0);
  EXPECT_NEAR(total_loss(scalar(2), scalar(4), Var<double>(), defaults).value().item(), 10.0, 1e-12);
  oracle::Gen gen(25);
  for (int c = 0; c < 50; ++c) {
    const double a = gen.real(0, 3), b = gen.real(0, 3), r = gen.real(0, 3);
    EXPECT_NEAR(total_loss(scalar(2 * a), scalar(2 * b), scalar(2 * r), defaults).value().item(),
                2 * total_loss(scalar(a), scalar(b), scalar(r), defaults).value().item(), 1e-12);
  }
}

TEST(TotalLoss, NonFiniteComponentIsNamed) {
  try {
    total_loss(scalar(1), scalar(std::numeric_limits<double>::quiet_NaN()), scalar(1), LossWeights{});
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.component(), "tri");
  }
  EXPECT_THROW(LossWeights({-1, 1, 1, 0.3}).validate(), ConfigError);
}

TEST(Heads, EvaluatorRangeAndZeroFinalLayer) {
  Rng rng(4);
  SwaHeads<double> heads(8, 3, true, rng);
  oracle::Gen gen(26);
  const Var<double> v = rows(gen.vectors(5, 8, 3.0));
  for (StreamTag tag : {StreamTag::kHr, StreamTag::kLr, StreamTag::kSynthHr, StreamTag::kSynthLr}) {
    const Var<double> w_tag = heads.evaluate({v, tag});
    for (double w : w_tag.value().values()) {
      EXPECT_GT(w, 0.0);
      EXPECT_LT(w, 1.0);
    }
  }
  heads.evaluator(Stream::kHr).output().weight().mutable_value().fill(0.0);
  heads.evaluator(Stream::kHr).output().bias().mutable_value().fill(0.0);
  const Var<double> half = heads.evaluate({v, StreamTag::kSynthHr});
  for (double w : half.value().values()) EXPECT_EQ(w, 0.5);
}

// Synthetic vectors share the heads of their resolution: F'_HR with the HR
// heads, F'_LR with the LR heads.
TEST(Heads, RoutingByResolution) {
  Rng rng(5);
  SwaHeads<double> heads(8, 4, true, rng);
  oracle::Gen gen(27);
  const Var<double> v = rows(gen.vectors(3, 8));
  auto same = [](const Var<double>& a, const Var<double>& b) {
    return std::ranges::equal(a.value().values(), b.value().values());
  };
  EXPECT_TRUE(same(heads.classify({v, StreamTag::kSynthLr}), heads.classifier(Stream::kLr)(v)));
  EXPECT_TRUE(same(heads.classify({v, StreamTag::kSynthHr}), heads.classifier(Stream::kHr)(v)));
  EXPECT_FALSE(same(heads.classify({v, StreamTag::kSynthLr}), heads.classifier(Stream::kHr)(v)));
  EXPECT_TRUE(same(heads.evaluate({v, StreamTag::kSynthHr}), heads.evaluator(Stream::kHr)(v)));
  EXPECT_TRUE(same(heads.evaluate({v, StreamTag::kSynthLr}), heads.evaluator(Stream::kLr)(v)));
  EXPECT_EQ(heads.classify({v, StreamTag::kHr}).shape(), (Shape{3, 4, 1, 1}));

  ParameterSet<double> set;
  heads.collect("swa", set);
  for (const char* ns : {"swa.w_hr.", "swa.w_lr.", "swa.c_hr.", "swa.c_lr."}) EXPECT_TRUE(set.has_namespace(ns));
}

TEST(Heads, ZeroInputZeroBiasGivesZeroLogits) {
  Rng rng(6);
  SwaHeads<double> heads(8, 4, false, rng);
  heads.classifier(Stream::kLr).linear().bias().mutable_value().fill(0.0);
  const Var<double> z = Var<double>::constant(Tensor<double>(Shape{2, 8, 1, 1}));
  const Var<double> logits = heads.classify({z, StreamTag::kLr});
  for (double x : logits.value().values()) EXPECT_EQ(x, 0.0);
  EXPECT_THROW(heads.evaluate({z, StreamTag::kLr}), ContractError);
  EXPECT_FALSE(heads.has_evaluators());
}

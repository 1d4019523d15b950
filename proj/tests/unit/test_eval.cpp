#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "ftwa/errors.hpp"
#include "ftwa/eval.hpp"
#include "support/oracles.hpp"

namespace oracle = ftwa::testing;

using namespace ftwa;

namespace {

std::vector<double> unit(oracle::Gen& gen, int d) {
  std::vector<double> v(d);
  double n = 0;
  for (double& x : v) {
    x = gen.normal();
    n += x * x;
  }
  for (double& x : v) x /= std::sqrt(n);
  return v;
}

Descriptor random_descriptor(oracle::Gen& gen, FeatureSpace space, bool aux, int d = 6) {
  Descriptor out;
  out.primary = unit(gen, d);
  out.primary_space = space;
  if (aux) {
    out.auxiliary = unit(gen, d);
    out.w_primary = gen.real(0.05, 0.95);
    out.w_auxiliary = 1 - out.w_primary;
  }
  return out;
}

FtwaModel<float> desk_model(Variant v) {
  TrainConfig c = TrainConfig::desk();
  c.variant = v;
  return FtwaModel<float>(ModelConfig::from_train(c, 10));
}

std::vector<ImageRecord> sample_records(int n) {
  SyntheticCorpusConfig c;
  c.identities = 2;
  auto all = generate_synthetic_corpus(c);
  all.resize(n);
  return all;
}

}  // namespace

TEST(Distance, NonNegativeAndZeroOnSelf) {
  oracle::Gen gen(31);
  for (int c = 0; c < 200; ++c) {
    const Descriptor a = random_descriptor(gen, FeatureSpace::kHr, c % 2 == 0);
    const Descriptor b = random_descriptor(gen, FeatureSpace::kHr, c % 2 == 0);
    EXPECT_GE(distance(a, b), 0.0);
    EXPECT_NEAR(distance(a, a), 0.0, 1e-12);
    EXPECT_NEAR(distance(a, b), distance(b, a), 1e-12);
  }
}

// A query's RAFT vector meets the gallery's HR vector, and the query's LR
// vector meets the gallery's down-sampled view.
TEST(Distance, CrossRolePairingIsResolutionAligned) {
  oracle::Gen gen(32);
  for (int c = 0; c < 100; ++c) {
    const Descriptor q = random_descriptor(gen, FeatureSpace::kLr, true);
    const Descriptor g = random_descriptor(gen, FeatureSpace::kHr, true);
    const double expect = std::sqrt(q.w_auxiliary * g.w_primary) * oracle::euclid(q.auxiliary, g.primary) +
                          std::sqrt(q.w_primary * g.w_auxiliary) * oracle::euclid(q.primary, g.auxiliary);
    EXPECT_NEAR(distance(q, g), expect, 1e-12);
  }
}

TEST(Distance, PrimaryOnlyWithoutAuxiliaries) {
  oracle::Gen gen(33);
  const Descriptor q = random_descriptor(gen, FeatureSpace::kLr, false);
  Descriptor g = random_descriptor(gen, FeatureSpace::kHr, true);
  EXPECT_NEAR(distance(q, g), std::sqrt(g.w_primary) * oracle::euclid(q.primary, g.primary), 1e-12);
  Descriptor short_q = q;
  short_q.primary.pop_back();
  EXPECT_THROW(distance(short_q, g), ShapeError);
}

TEST(Descriptors, BaselineUsesPrimaryOnly) {
  FtwaModel<float> model = desk_model(Variant::kBaseline);
  for (Role role : {Role::kQuery, Role::kGallery}) {
    for (const Descriptor& d : extract_descriptors(model, sample_records(3), role)) {
      EXPECT_EQ(d.w_primary, 1.0);
      EXPECT_EQ(d.w_auxiliary, 0.0);
      EXPECT_FALSE(d.has_auxiliary());
    }
  }
}

TEST(Descriptors, FusedWeightsSumToOneAndVectorsAreUnit) {
  FtwaModel<float> model = desk_model(Variant::kFtwa);
  const auto records = sample_records(4);
  for (Role role : {Role::kQuery, Role::kGallery}) {
    for (const Descriptor& d : extract_descriptors(model, records, role)) {
      EXPECT_NEAR(d.w_primary + d.w_auxiliary, 1.0, 1e-12);
      EXPECT_GT(d.w_primary, 0.0);
      EXPECT_GT(d.w_auxiliary, 0.0);
      EXPECT_NEAR(std::sqrt(std::inner_product(d.primary.begin(), d.primary.end(), d.primary.begin(), 0.0)), 1.0,
                  1e-6);
      EXPECT_EQ(d.auxiliary.size(), 256u);
      EXPECT_EQ(d.primary_space, role == Role::kQuery ? FeatureSpace::kLr : FeatureSpace::kHr);
    }
  }
  EvalOptions off;
  off.fusion = false;
  for (const Descriptor& d : extract_descriptors(model, records, Role::kGallery, off)) {
    EXPECT_EQ(d.w_primary, 1.0);
    EXPECT_TRUE(d.auxiliary.empty());
  }
}

TEST(Descriptors, RaftWithoutEvaluatorsUsesEqualWeights) {
  FtwaModel<float> model = desk_model(Variant::kFtwaR);
  for (const Descriptor& d : extract_descriptors(model, sample_records(2), Role::kQuery)) {
    EXPECT_EQ(d.w_primary, 0.5);
    EXPECT_EQ(d.w_auxiliary, 0.5);
  }
}

TEST(Descriptors, BatchingDoesNotChangeResults) {
  FtwaModel<float> model = desk_model(Variant::kFtwa);
  const auto records = sample_records(5);
  EvalOptions one;
  one.batch_size = 1;
  const auto a = extract_descriptors(model, records, Role::kGallery);
  const auto b = extract_descriptors(model, records, Role::kGallery, one);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < a[i].primary.size(); ++k) EXPECT_NEAR(a[i].primary[k], b[i].primary[k], 1e-5);
  }
}

TEST(SingleShot, OnePerIdentityAndDeterministic) {
  const std::vector<int> gl{3, 1, 3, 2, 1, 3, 2};
  for (int t = 0; t < 10; ++t) {
    const auto kept = single_shot_selection(gl, 5, t);
    ASSERT_EQ(kept.size(), 3u);
    EXPECT_TRUE(std::is_sorted(kept.begin(), kept.end()));
    std::set<int> ids;
    for (auto i : kept) ids.insert(gl[i]);
    EXPECT_EQ(ids.size(), 3u);
    EXPECT_EQ(kept, single_shot_selection(gl, 5, t));
  }
}

TEST(Cmc, MatchesSortingOracle) {
  oracle::Gen gen(34);
  for (int c = 0; c < 100; ++c) {
    const int nq = gen.integer(1, 8), ng = gen.integer(2, 12), ids = gen.integer(1, 4);
    std::vector<int> gl = gen.labels(ng, ids);
    for (int i = 0; i < ids && i < ng; ++i) gl[i] = i;
    std::vector<int> ql(nq);
    for (int& l : ql) l = gen.integer(0, std::min(ids, ng) - 1);
    std::vector<double> dist(static_cast<std::size_t>(nq) * ng);
    for (double& d : dist) d = static_cast<double>(gen.integer(0, 4));  // plenty of ties
    CmcOptions o;
    o.trials = gen.integer(1, 5);
    o.seed = static_cast<std::uint64_t>(c);
    o.ranks = {1, 2, 3};
    const CMCResult r = cmc_from_distances(dist, ql, gl, o);
    const auto expect = oracle::brute_cmc(dist, ql, gl, o);
    for (std::size_t k = 0; k < o.ranks.size(); ++k) ASSERT_NEAR(r.accuracy[k], expect[k], 1e-12);
    ASSERT_EQ(r.per_trial.size(), static_cast<std::size_t>(o.trials));
  }
}

TEST(Cmc, MonotoneInRank) {
  oracle::Gen gen(35);
  const int ng = 30, nq = 20;
  std::vector<int> gl(ng), ql(nq);
  for (int i = 0; i < ng; ++i) gl[i] = i % 25;
  for (int& l : ql) l = gen.integer(0, 24);
  std::vector<double> dist(nq * ng);
  for (double& d : dist) d = gen.real(0, 1);
  const CMCResult r = cmc_from_distances(dist, ql, gl);
  for (std::size_t k = 1; k < r.accuracy.size(); ++k) EXPECT_GE(r.accuracy[k], r.accuracy[k - 1]);
}

// Distances carrying no information give rank-1 = 1/G in expectation.
TEST(Cmc, RandomDistancesGiveChanceLevel) {
  oracle::Gen gen(36);
  const int ids = 10, nq = 400;
  std::vector<int> gl, ql(nq);
  for (int i = 0; i < ids; ++i) gl.insert(gl.end(), {i, i});
  for (int& l : ql) l = gen.integer(0, ids - 1);
  std::vector<double> dist(nq * gl.size());
  for (double& d : dist) d = gen.real(0, 1);
  CmcOptions o;
  o.ranks = {1, 5};
  const CMCResult r = cmc_from_distances(dist, ql, gl, o);
  EXPECT_NEAR(r.at(1), 0.1, 0.03);
  EXPECT_NEAR(r.at(5), 0.5, 0.05);
}

TEST(Cmc, ProtocolAndContractErrors) {
  const std::vector<double> dist{0.1, 0.2};
  EXPECT_THROW(cmc_from_distances(dist, {7}, {1, 2}), ProtocolError);
  EXPECT_THROW(cmc_from_distances(dist, {1, 2}, {1, 2}), ShapeError);
  CmcOptions none;
  none.trials = 0;
  EXPECT_THROW(cmc_from_distances(dist, {1}, {1, 2}, none), ConfigError);
  const CMCResult r = cmc_from_distances(dist, {1}, {1, 2});
  EXPECT_DOUBLE_EQ(r.at(1), 1.0);
  EXPECT_THROW(r.at(3), ContractError);
}

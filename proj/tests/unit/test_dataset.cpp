#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "ftwa/dataset.hpp"
#include "ftwa/errors.hpp"
#include "support/oracles.hpp"

namespace oracle = ftwa::testing;

using namespace ftwa;
namespace fs = std::filesystem;

namespace {

ImageRecord constant_record(int h, int w, float v) {
  ImageRecord r;
  r.image = Image(h, w, v);
  r.person_id = 3;
  r.camera_id = 1;
  return r;
}

SyntheticCorpusConfig small_corpus(int ids = 20) {
  SyntheticCorpusConfig c;
  c.identities = ids;
  return c;
}

}  // namespace

TEST(Downsample, PaperRateShrinksByFloor) {
  const ImageRecord r = downsample(constant_record(256, 128, 0.3f), 4);
  EXPECT_EQ(r.image.size(), (ImageSize{64, 32}));
  EXPECT_EQ(r.tag, ResolutionTag::kSynthLr);
  EXPECT_EQ(r.rate, 4);
  EXPECT_EQ(r.person_id, 3);
  EXPECT_EQ(r.camera_id, 1);
  EXPECT_EQ(downsample(constant_record(65, 33, 0.3f), 3).image.size(), (ImageSize{21, 11}));
}

TEST(Downsample, RejectsRateBelowTwo) {
  EXPECT_THROW(downsample(constant_record(8, 8, 0.5f), 1), ContractError);
}

TEST(Downsample, RateLargerThanImageIsDegenerate) {
  EXPECT_THROW(downsample(constant_record(8, 3, 0.5f), 4), DegenerateInputError);
}

TEST(Downsample, ConstantStaysConstant) {
  const ImageRecord r = downsample(constant_record(8, 8, 0.625f), 2);
  ASSERT_EQ(r.image.size(), (ImageSize{4, 4}));
  for (float p : r.image.pixels()) EXPECT_FLOAT_EQ(p, 0.625f);
}

TEST(Upsample, ConstantAndIdentityCases) {
  ImageRecord lr = downsample(constant_record(64, 32, 0.2f), 4);
  const ImageRecord up = upsample_to_canonical(lr, {256, 128});
  EXPECT_EQ(up.image.size(), (ImageSize{256, 128}));
  EXPECT_EQ(up.tag, ResolutionTag::kSynthLr);
  for (float p : up.image.pixels()) EXPECT_NEAR(p, 0.2f, 1e-6);

  oracle::Gen gen(3);
  ImageRecord noisy = constant_record(16, 8, 0.0f);
  for (float& p : noisy.image.pixels()) p = static_cast<float>(gen.real(0, 1));
  EXPECT_EQ(upsample_to_canonical(noisy, {16, 8}).image, noisy.image);
}

TEST(Resize, StaysWithinInputRange) {
  oracle::Gen gen(11);
  for (int c = 0; c < 20; ++c) {
    Image img(gen.integer(4, 20), gen.integer(4, 20));
    for (float& p : img.pixels()) p = static_cast<float>(gen.real(0, 1));
    const Image out = resize_bilinear(img, {gen.integer(2, 40), gen.integer(2, 40)});
    for (float p : out.pixels()) {
      EXPECT_GE(p, 0.0f);
      EXPECT_LE(p, 1.0f);
    }
  }
}

TEST(SyntheticCorpus, CountsAndDeterminism) {
  const auto a = generate_synthetic_corpus(small_corpus());
  EXPECT_EQ(a.size(), 160u);
  std::set<int> ids;
  for (const auto& r : a) {
    ids.insert(r.person_id);
    EXPECT_NO_THROW(r.validate());
  }
  EXPECT_EQ(ids.size(), 20u);
  const auto b = generate_synthetic_corpus(small_corpus());
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].image, b[i].image);
}

TEST(SyntheticCorpus, RejectsZeroCounts) {
  SyntheticCorpusConfig c;
  c.cameras = 0;
  EXPECT_THROW(generate_synthetic_corpus(c), ConfigError);
}

// Identity must be recoverable from raw pixels. Leave-one-out nearest
// centroid: each image is labelled by the closest mean of the others.
double nearest_centroid_accuracy(const std::vector<ImageRecord>& records) {
  int correct = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::map<int, std::vector<double>> centroid;
    std::map<int, int> count;
    for (std::size_t j = 0; j < records.size(); ++j) {
      if (j == i) continue;
      const auto& px = records[j].image.pixels();
      auto& acc = centroid[records[j].person_id];
      acc.resize(px.size(), 0.0);
      for (std::size_t k = 0; k < px.size(); ++k) acc[k] += px[k];
      ++count[records[j].person_id];
    }
    const auto& px = records[i].image.pixels();
    const std::vector<double> v(px.begin(), px.end());
    int best = -1;
    double best_d = 0;
    for (auto& [id, acc] : centroid) {
      for (double& x : acc) x /= count[id];
      const double d = oracle::euclid(v, acc);
      if (best < 0 || d < best_d) best = id, best_d = d;
    }
    correct += best == records[i].person_id;
  }
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

TEST(SyntheticCorpus, NearestCentroidSeparatesTwoIdentities) {
  SyntheticCorpusConfig c;
  c.identities = 2;
  EXPECT_GT(nearest_centroid_accuracy(generate_synthetic_corpus(c)), 0.9);
  double total = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    c.seed = seed;
    total += nearest_centroid_accuracy(generate_synthetic_corpus(c));
  }
  EXPECT_GT(total / 30, 0.9);
}

TEST(MlrSplit, LrCameraBecomesSyntheticQueries) {
  MLRConfig config;
  config.canonical_size = {64, 32};
  const MlrSplit split = build_mlr_split(generate_synthetic_corpus(small_corpus()), config);
  EXPECT_EQ(split.train_identities.size() + split.test_identities.size(), 20u);
  EXPECT_FALSE(split.query.empty());
  for (const auto& q : split.query) {
    EXPECT_EQ(q.camera_id, 1);
    EXPECT_EQ(q.tag, ResolutionTag::kSynthLr);
    ASSERT_TRUE(q.rate.has_value());
    EXPECT_TRUE(config.rate_set.contains(*q.rate));
  }
  std::set<int> gallery_ids;
  for (const auto& g : split.gallery) {
    EXPECT_EQ(g.camera_id, 0);
    EXPECT_EQ(g.tag, ResolutionTag::kRealHr);
    gallery_ids.insert(g.person_id);
  }
  for (const auto& q : split.query) EXPECT_TRUE(gallery_ids.contains(q.person_id));
  const std::set<int> train(split.train_identities.begin(), split.train_identities.end());
  for (int id : split.test_identities) EXPECT_FALSE(train.contains(id));
}

TEST(MlrSplit, SingletonRateSet) {
  MLRConfig config;
  config.rate_set = {2};
  const MlrSplit split = build_mlr_split(generate_synthetic_corpus(small_corpus()), config);
  for (const auto& q : split.query) EXPECT_EQ(q.rate, 2);
}

TEST(MlrSplit, DeterministicUnderSeed) {
  SyntheticCorpusConfig c;
  c.identities = 10;
  c.images_per_id_per_camera = 1;
  const auto records = generate_synthetic_corpus(c);
  MLRConfig config;
  config.rng_seed = 5;
  const MlrSplit a = build_mlr_split(records, config);
  const MlrSplit b = build_mlr_split(records, config);
  EXPECT_EQ(a.test_identities, b.test_identities);
  ASSERT_EQ(a.query.size(), b.query.size());
  for (std::size_t i = 0; i < a.query.size(); ++i) {
    EXPECT_EQ(a.query[i].rate, b.query[i].rate);
    EXPECT_EQ(a.query[i].image, b.query[i].image);
  }
}

TEST(MlrSplit, SingleCameraIdentityIsExcluded) {
  auto records = generate_synthetic_corpus(small_corpus(6));
  std::erase_if(records, [](const ImageRecord& r) { return r.person_id == 0 && r.camera_id == 1; });
  MLRConfig config;
  config.test_identities = std::set<int>{0, 1, 2};
  const MlrSplit split = build_mlr_split(records, config);
  EXPECT_EQ(split.excluded_identities, 1);
  EXPECT_EQ(split.test_identities, (std::vector<int>{1, 2}));
}

TEST(MlrSplit, RejectsBadConfig) {
  const auto records = generate_synthetic_corpus(small_corpus(4));
  MLRConfig config;
  config.rate_set = {1, 2};
  EXPECT_THROW(build_mlr_split(records, config), ConfigError);
  config = {};
  config.lr_camera_ids = {0, 1};
  EXPECT_THROW(build_mlr_split(records, config), ConfigError);
  config = {};
  config.lr_camera_ids = {5};
  EXPECT_THROW(build_mlr_split(records, config), ConfigError);
}

TEST(PkSampler, BatchShapeAndPairing) {
  MLRConfig config;
  config.canonical_size = {64, 32};
  const MlrSplit split = build_mlr_split(generate_synthetic_corpus(small_corpus()), config);
  PkConfig pk;
  pk.identities_per_batch = 4;
  pk.instances_per_identity = 4;
  const PkSampler sampler(split.train, pk);
  for (std::size_t i = 0; i < 5; ++i) {
    const TrainingBatch b = sampler.batch(i / 2, i % 2);
    ASSERT_EQ(b.size(), 16u);
    EXPECT_EQ(b.hr_images.size(), 16u);
    EXPECT_EQ(b.lr_images.size(), 16u);
    EXPECT_EQ(b.synth_lr_views.size(), 16u);
    std::map<int, int> per_id;
    for (int l : b.labels) ++per_id[l];
    EXPECT_EQ(per_id.size(), 4u);
    for (const auto& [id, n] : per_id) EXPECT_EQ(n, 4);
    for (std::size_t k = 0; k < b.size(); ++k) {
      EXPECT_EQ(b.hr_images[k].tag, ResolutionTag::kRealHr);
      EXPECT_EQ(b.hr_images[k].person_id, b.labels[k]);
      EXPECT_EQ(b.lr_images[k].person_id, b.labels[k]);
      EXPECT_EQ(b.synth_lr_views[k].person_id, b.labels[k]);
      EXPECT_EQ(b.synth_lr_views[k].tag, ResolutionTag::kSynthLr);
      const int r = *b.synth_lr_views[k].rate;
      EXPECT_EQ(b.synth_lr_views[k].image.size(),
                (ImageSize{b.hr_images[k].image.height() / r, b.hr_images[k].image.width() / r}));
    }
  }
}

TEST(PkSampler, PaperBatchSizeAndDeterminism) {
  const MlrSplit split = build_mlr_split(generate_synthetic_corpus(small_corpus(40)), MLRConfig{});
  PkConfig pk;  // P = 16, K = 4
  pk.seed = 9;
  const PkSampler a(split.train, pk), b(split.train, pk);
  const TrainingBatch x = a.batch(3, 0), y = b.batch(3, 0);
  EXPECT_EQ(x.size(), 64u);
  EXPECT_EQ(x.labels, y.labels);
  for (std::size_t k = 0; k < x.size(); ++k) EXPECT_EQ(x.synth_lr_views[k].image, y.synth_lr_views[k].image);
}

TEST(PkSampler, TwoByTwoAlwaysAdmitsATriplet) {
  const MlrSplit split = build_mlr_split(generate_synthetic_corpus(small_corpus()), MLRConfig{});
  PkConfig pk;
  pk.identities_per_batch = 2;
  pk.instances_per_identity = 2;
  const PkSampler sampler(split.train, pk);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto labels = sampler.batch(0, i).labels;
    const std::set<int> distinct(labels.begin(), labels.end());
    EXPECT_EQ(distinct.size(), 2u);
  }
}

TEST(PkSampler, TooFewIdentities) {
  const MlrSplit split = build_mlr_split(generate_synthetic_corpus(small_corpus(6)), MLRConfig{});
  PkConfig pk;
  pk.identities_per_batch = 16;
  EXPECT_THROW(PkSampler(split.train, pk), ConfigError);
  pk.identities_per_batch = 2;
  pk.instances_per_identity = 1;
  EXPECT_THROW(PkSampler(split.train, pk), ConfigError);
}

TEST(SplitManifest, RoundTrip) {
  const fs::path dir = fs::temp_directory_path() / "ftwa-test-manifest";
  fs::create_directories(dir);
  CorpusSource source;
  source.synthetic = small_corpus(8);
  MLRConfig config;
  config.canonical_size = {64, 32};
  const MlrSplit split = build_mlr_split(generate_synthetic_corpus(source.synthetic), config);
  write_split_manifest(dir / "split.json", split, source, config);
  const LoadedSplit loaded = load_split_manifest(dir / "split.json");
  EXPECT_EQ(loaded.split.test_identities, split.test_identities);
  ASSERT_EQ(loaded.split.query.size(), split.query.size());
  for (std::size_t i = 0; i < split.query.size(); ++i) {
    EXPECT_EQ(loaded.split.query[i].image, split.query[i].image);
    EXPECT_EQ(loaded.split.query[i].rate, split.query[i].rate);
  }
  EXPECT_EQ(loaded.split.train.size(), split.train.size());
  fs::remove_all(dir);
}

TEST(Ingest, MissingDirectoryNamesThePath) {
  try {
    ingest_directory("/nonexistent/ftwa-data");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/ftwa-data"), std::string::npos);
  }
}

TEST(Ingest, RejectsBadNames) {
  const fs::path dir = fs::temp_directory_path() / "ftwa-test-ingest";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "notes.txt") << "x";
  std::ofstream(dir / "1_0_0.png") << "not an image";
  const IngestReport report = ingest_directory(dir);
  EXPECT_TRUE(report.records.empty());
  EXPECT_EQ(report.rejected.size(), 2u);
  fs::remove_all(dir);
}

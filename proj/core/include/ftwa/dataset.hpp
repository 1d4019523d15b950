#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ftwa/tensor.hpp"

namespace ftwa {

enum class ResolutionTag { kRealHr, kRealLr, kSynthLr };

std::string to_string(ResolutionTag tag);
ResolutionTag parse_resolution_tag(const std::string& s);

struct ImageSize {
  int height = 0;
  int width = 0;
  bool operator==(const ImageSize&) const = default;
  std::string str() const { return std::to_string(height) + "x" + std::to_string(width); }
};

/// Row-major H x W x 3 RGB intensities in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int height, int width, float fill = 0.0f);
  Image(int height, int width, std::vector<float> pixels);

  int height() const { return height_; }
  int width() const { return width_; }
  ImageSize size() const { return {height_, width_}; }
  float& at(int y, int x, int ch) { return pixels_[(static_cast<std::size_t>(y) * width_ + x) * 3 + ch]; }
  float at(int y, int x, int ch) const {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * 3 + ch];
  }
  const std::vector<float>& pixels() const { return pixels_; }
  std::vector<float>& pixels() { return pixels_; }
  bool operator==(const Image&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> pixels_;
};

struct ImageRecord {
  Image image;
  int person_id = 0;
  int camera_id = 0;
  ResolutionTag tag = ResolutionTag::kRealHr;
  std::optional<int> rate;  // set iff tag == kSynthLr
  std::optional<std::string> source_path;
  /// True for the on-the-fly low-resolution twin of an HR training image.
  bool paired_view = false;

  /// Throws ContractError if the record breaks the type invariants.
  void validate() const;
};

/// Separable triangle-filter resampling. When shrinking, the filter support
/// widens with the scale factor (anti-aliasing); weights are renormalized at
/// borders so constant images stay constant.
Image resize_bilinear(const Image& image, ImageSize size);

/// Degrade to floor(H/r) x floor(W/r). Requires r >= 2 (ContractError);
/// a rate larger than either dimension raises DegenerateInputError.
ImageRecord downsample(const ImageRecord& record, int rate);

/// Bilinear resize to the network input size; the tag is preserved and an
/// image already at that size is returned unchanged.
ImageRecord upsample_to_canonical(const ImageRecord& record, ImageSize canonical);

/// Stack canonical-size records into an NCHW tensor, normalized as (p - 0.5) / 0.25.
template <typename T>
Tensor<T> to_network_input(const std::vector<const ImageRecord*>& records, ImageSize canonical);

// ---------------------------------------------------------------------------
// Corpus sources

struct SyntheticCorpusConfig {
  int identities = 20;
  int cameras = 2;
  int images_per_id_per_camera = 4;
  std::uint64_t seed = 7;
  ImageSize size{64, 32};
};

/// Procedurally rendered pedestrians: each identity has a clothing/color
/// signature, each camera a global tint and background, each image
/// geometric jitter and sensor noise. Deterministic in the config.
std::vector<ImageRecord> generate_synthetic_corpus(const SyntheticCorpusConfig& config);

/// "synthetic://<person>/<camera>/<index>"
std::string synthetic_path(int person_id, int camera_id, int index);

struct RejectedFile {
  std::string path;
  std::string reason;
};

struct IngestReport {
  std::vector<ImageRecord> records;
  std::vector<RejectedFile> rejected;
};

/// Load every `<person_id>_<camera_id>_<index>.<png|jpg|jpeg>` file in `root`
/// (sorted by name). Other files are listed in `rejected`. Throws IoError if
/// the directory does not exist.
IngestReport ingest_directory(const std::filesystem::path& root);

// ---------------------------------------------------------------------------
// MLR protocol

struct MLRConfig {
  std::set<int> rate_set{2, 3, 4};
  std::set<int> lr_camera_ids{1};
  ImageSize canonical_size{256, 128};
  std::uint64_t rng_seed = 0;
  /// Fraction of identities held out for testing when no explicit list is given.
  double test_fraction = 0.5;
  std::optional<std::set<int>> test_identities;
  /// When false, LR-camera images are natively low resolution and kept as REAL_LR.
  bool degrade_lr_cameras = true;

  void validate() const;
};

struct MlrSplit {
  std::vector<ImageRecord> train;
  std::vector<ImageRecord> query;
  std::vector<ImageRecord> gallery;
  std::vector<int> train_identities;
  std::vector<int> test_identities;
  /// Test identities dropped because they were not seen by both an HR and an LR camera.
  int excluded_identities = 0;
};

MlrSplit build_mlr_split(const std::vector<ImageRecord>& records, const MLRConfig& config);

/// Where a split's records came from, so a manifest can be re-materialized.
struct CorpusSource {
  enum class Kind { kSynthetic, kDirectory } kind = Kind::kSynthetic;
  SyntheticCorpusConfig synthetic;
  std::string root;
};

void write_split_manifest(const std::filesystem::path& path, const MlrSplit& split,
                          const CorpusSource& source, const MLRConfig& config);

struct LoadedSplit {
  MlrSplit split;
  CorpusSource source;
  MLRConfig config;
};

/// Rebuild a split from a manifest: regenerate or reload the source images and
/// re-apply the recorded per-record degradation rates.
LoadedSplit load_split_manifest(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Identity-balanced sampling

struct TrainingBatch {
  /// P*K each; slot i of all three lists belongs to labels[i].
  std::vector<ImageRecord> hr_images;
  std::vector<ImageRecord> lr_images;
  /// Down-sampled twin of hr_images[i], at its native low resolution.
  std::vector<ImageRecord> synth_lr_views;
  std::vector<int> labels;
  int identities_per_batch = 0;
  int instances_per_identity = 0;

  std::size_t size() const { return labels.size(); }
};

struct PkConfig {
  int identities_per_batch = 16;  // P
  int instances_per_identity = 4;  // K
  std::uint64_t seed = 0;
  std::set<int> rate_set{2, 3, 4};
  bool horizontal_flip = false;
};

class PkSampler {
 public:
  /// Throws ConfigError unless at least P identities have an HR image, an LR
  /// image and K images in total, or if K < 2.
  PkSampler(const std::vector<ImageRecord>& train_set, PkConfig config);

  /// Batch `index` of `epoch`; a pure function of (train_set, config, epoch, index).
  TrainingBatch batch(std::size_t epoch, std::size_t index) const;
  /// floor(eligible identities / P), at least 1.
  std::size_t batches_per_epoch() const;
  const std::vector<int>& identities() const { return identities_; }

 private:
  struct Pool {
    std::vector<std::size_t> hr;
    std::vector<std::size_t> lr;
  };
  std::vector<ImageRecord> records_;
  std::vector<int> identities_;
  std::vector<Pool> pools_;
  PkConfig config_;
};

}  // namespace ftwa

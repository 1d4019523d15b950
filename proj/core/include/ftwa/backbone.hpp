#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ftwa/dataset.hpp"
#include "ftwa/layers.hpp"

namespace ftwa {

enum class BackboneVariant { kPaperScale, kTiny };

/// Which shallow encoder an image goes through.
enum class Stream { kHr, kLr };

/// Provenance of a feature map: F_HR, F_LR, F'_LR (paired synthetic view) or
/// F'_HR (RAFT output).
enum class StreamTag { kHr, kLr, kSynthLr, kSynthHr };

std::string to_string(StreamTag tag);

struct BackboneConfig {
  BackboneVariant variant = BackboneVariant::kTiny;
  /// Output channels of the four stages.
  std::vector<int> stage_channels{32, 64, 128, 256};
  std::vector<int> blocks_per_stage{1, 1, 1, 1};
  int last_stage_stride = 1;
  ImageSize input_size{64, 32};
  /// False for the single-stream baseline: there is no E_L and every image uses E_H.
  bool two_stream = true;

  static BackboneConfig tiny();
  static BackboneConfig paper_scale();

  int embedding_dim() const { return stage_channels.back(); }
  /// (C, H, W) of the deep encoder output, traced through the configured strides.
  Shape feature_shape() const;
  void validate() const;
};

template <typename T>
struct FeatureMap {
  Var<T> values;  // (N, C, H, W)
  StreamTag tag = StreamTag::kHr;
};

template <typename T>
class ResidualBlock {
 public:
  /// Bottleneck blocks expand `mid` by 4; basic blocks use out == mid.
  ResidualBlock(int in_channels, int mid_channels, int out_channels, int stride, bool bottleneck,
                Rng& rng);
  Var<T> operator()(const Var<T>& x, bool training);
  void collect(const std::string& prefix, ParameterSet<T>& out);

 private:
  bool bottleneck_;
  std::vector<Conv2d<T>> convs_;
  std::vector<BatchNorm2d<T>> norms_;
  std::optional<Conv2d<T>> shortcut_;
  std::optional<BatchNorm2d<T>> shortcut_norm_;
};

/// Stem convolution followed by the first residual stage (E_H / E_L).
template <typename T>
class ShallowEncoder {
 public:
  ShallowEncoder(const BackboneConfig& config, Rng& rng);
  Var<T> operator()(const Var<T>& images, bool training);
  void collect(const std::string& prefix, ParameterSet<T>& out);

 private:
  Conv2d<T> stem_;
  BatchNorm2d<T> stem_norm_;
  bool max_pool_;
  std::vector<ResidualBlock<T>> blocks_;
};

/// Stages two to four, shared by both streams (E_ID).
template <typename T>
class DeepEncoder {
 public:
  DeepEncoder(const BackboneConfig& config, Rng& rng);
  Var<T> operator()(const Var<T>& x, bool training);
  void collect(const std::string& prefix, ParameterSet<T>& out);

 private:
  std::vector<ResidualBlock<T>> blocks_;
};

template <typename T>
class Backbone {
 public:
  Backbone(const BackboneConfig& config, std::uint64_t seed);

  const BackboneConfig& config() const { return config_; }

  /// E_H or E_L on an NCHW batch at the canonical input size.
  Var<T> shallow(const Var<T>& images, Stream stream, bool training);
  /// E_ID.
  Var<T> deep(const Var<T>& shallow_features, bool training);

  /// E_ID(E_stream(images)) with the given provenance tag.
  FeatureMap<T> forward(const Var<T>& images, Stream stream, StreamTag tag, bool training);

  /// Inference on one canonical-size record. The tag is F_HR for the HR
  /// stream, F'_LR for paired views and F_LR otherwise. Throws ShapeError if
  /// the image is not at the canonical size.
  FeatureMap<T> encode(const ImageRecord& image, Stream stream);

  /// (F_HR, F'_LR) for an HR record: the LR twin is downsample -> upsample
  /// with a rate drawn from `rates` using `seed`.
  std::pair<FeatureMap<T>, FeatureMap<T>> forward_pair(const ImageRecord& hr_image,
                                                       const std::set<int>& rates,
                                                       std::uint64_t seed);

  void collect(const std::string& prefix, ParameterSet<T>& out);

 private:
  ShallowEncoder<T>& encoder_for(Stream stream);

  BackboneConfig config_;
  std::unique_ptr<ShallowEncoder<T>> e_h_;
  std::unique_ptr<ShallowEncoder<T>> e_l_;
  std::unique_ptr<DeepEncoder<T>> e_id_;
};

}  // namespace ftwa

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ftwa/backbone.hpp"
#include "ftwa/layers.hpp"

namespace ftwa {

constexpr double kRaftLeakySlope = 0.05;

struct RaftBlockConfig {
  int channels = 16;
  int num_inner_steps = 3;
  int attention_reduction = 4;

  void validate() const;
};

struct RaftConfig {
  /// Backbone feature channels C (input and output of the module).
  int channels = 256;
  /// Internal working width of the head, blocks and tail.
  int width = 16;
  int num_blocks = 3;
  int num_inner_steps = 3;
  int attention_reduction = 4;

  /// Width 16 for TINY-sized inputs, 64 for the ResNet-50 split.
  static RaftConfig for_backbone(const BackboneConfig& backbone);
  RaftBlockConfig block() const { return {width, num_inner_steps, attention_reduction}; }
  void validate() const;
};

/// First and second half of the channels. Throws ShapeError on odd C.
template <typename T>
std::pair<Var<T>, Var<T>> channel_split(const Var<T>& x);

template <typename T>
class RaftBlock {
 public:
  RaftBlock(const RaftBlockConfig& config, Rng& rng);

  /// Distillation rounds, CAT, Conv1, sigmoid gate and input residual.
  Var<T> operator()(const Var<T>& x) const;
  void collect(const std::string& prefix, ParameterSet<T>& out) const;

  Conv2d<T>& fuse() { return fuse_; }
  Conv2d<T>& gate_up() { return gate_up_; }
  /// Sigmoid gate activations for x, shape (N, C, 1, 1).
  Var<T> gate(const Var<T>& x) const;

 private:
  Var<T> features(const Var<T>& x) const;

  RaftBlockConfig config_;
  std::vector<Conv2d<T>> distill_;
  Conv2d<T> refine_;
  Conv2d<T> fuse_;
  Conv2d<T> gate_down_;
  Conv2d<T> gate_up_;
};

template <typename T>
class Raft {
 public:
  Raft(const RaftConfig& config, Rng& rng);

  const RaftConfig& config() const { return config_; }

  /// T(F). Requires an F_LR or F_SYNTH_LR map; the result is tagged F_SYNTH_HR.
  FeatureMap<T> operator()(const FeatureMap<T>& f) const;
  /// The untagged transform on raw (N, C, H, W) values.
  Var<T> transform(const Var<T>& x) const;
  /// Input skip plus the projected head output: T(F) when the tail's final
  /// convolution is zero.
  Var<T> global_residual(const Var<T>& x) const;

  void collect(const std::string& prefix, ParameterSet<T>& out) const;
  std::size_t parameter_count() const;

  Conv2d<T>& tail_out() { return tail_out_; }
  std::vector<RaftBlock<T>>& blocks() { return blocks_; }

 private:
  RaftConfig config_;
  Conv2d<T> head_;
  std::vector<RaftBlock<T>> blocks_;
  Conv2d<T> tail_fuse_;
  Conv2d<T> tail_out_;
  Conv2d<T> project_;
};

/// Mean absolute difference between the HR target map and T(F'_LR). The
/// target is detached unless `detach_target` is false.
template <typename T>
Var<T> raft_loss(const FeatureMap<T>& f_hr, const FeatureMap<T>& t_out, bool detach_target = true);

}  // namespace ftwa

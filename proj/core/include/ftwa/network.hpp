#pragma once

#include <map>
#include <optional>
#include <vector>

#include "ftwa/backbone.hpp"
#include "ftwa/config.hpp"
#include "ftwa/raft.hpp"
#include "ftwa/swa.hpp"

namespace ftwa {

struct ModelConfig {
  Variant variant = Variant::kFtwa;
  BackboneConfig backbone;
  RaftConfig raft;
  int num_identities = 2;
  LossWeights loss;
  TripletMining mining = TripletMining::kBatchAll;
  std::uint64_t seed = 0;
  bool evaluator_detach_input = false;

  static ModelConfig from_train(const TrainConfig& config, int num_identities);
};

/// Network inputs for one step. `synth_lr` holds the paired low-resolution
/// twin of every `hr` image (same labels). Any stream may be empty.
template <typename T>
struct BatchInputs {
  Tensor<T> hr;
  Tensor<T> lr;
  Tensor<T> synth_lr;
  std::vector<int> hr_labels;
  std::vector<int> lr_labels;
};

/// Canonical-size network inputs with labels mapped through `label_index`.
template <typename T>
BatchInputs<T> make_batch_inputs(const TrainingBatch& batch, const std::map<int, int>& label_index,
                                 ImageSize canonical, bool include_synthetic);

template <typename T>
struct LossBreakdown {
  Var<T> total;
  Var<T> cls;
  Var<T> tri;
  Var<T> raft;  // undefined without RAFT or without paired views
  /// Batch means of the per-stream quality weights (1 where not learned).
  double w_hr = 1, w_lr = 1, w_synth_hr = 1, w_synth_lr = 1;
  bool degenerate_triplets = false;
};

/// Backbone, optional RAFT and heads for one ablation variant.
template <typename T>
class FtwaModel {
 public:
  explicit FtwaModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  Backbone<T>& backbone() { return backbone_; }
  Raft<T>* raft() { return raft_ ? &*raft_ : nullptr; }
  SwaHeads<T>& heads() { return heads_; }

  /// Namespaced state: backbone.e_h., backbone.e_l., backbone.e_id., raft., swa.
  ParameterSet<T> parameters();

  /// The variant's objective on a batch. Streams absent from `batch` drop out
  /// of every term that needs them.
  LossBreakdown<T> losses(const BatchInputs<T>& batch, bool training);

 private:
  ModelConfig config_;
  Backbone<T> backbone_;
  std::optional<Raft<T>> raft_;
  SwaHeads<T> heads_;
};

}  // namespace ftwa

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ftwa/backbone.hpp"
#include "ftwa/layers.hpp"

namespace ftwa {

struct LossWeights {
  double lambda_cls = 3.0;
  double lambda_tri = 1.0;
  double lambda_raft = 0.1;
  double margin = 0.3;

  void validate() const;
};

enum class TripletMining { kBatchAll, kBatchHard };

/// One value per stream: real HR, real LR, RAFT output, synthetic LR.
template <typename X>
struct StreamQuad {
  X hr;
  X lr;
  X synth_hr;
  X synth_lr;
};

template <typename T>
struct ReidVectors {
  Var<T> values;  // (N, D, 1, 1)
  StreamTag tag = StreamTag::kHr;
};

/// Spatial mean per channel; the tag is carried through.
template <typename T>
ReidVectors<T> gap_flatten(const FeatureMap<T>& f);

/// Quality evaluator D -> D/4 -> 1 with a leaky ReLU hidden layer and a sigmoid output.
template <typename T>
class QualityEvaluator {
 public:
  QualityEvaluator() = default;
  QualityEvaluator(int dim, Rng& rng);

  /// (N, D, 1, 1) -> (N, 1, 1, 1), every entry in (0, 1).
  Var<T> operator()(const Var<T>& v) const;
  void collect(const std::string& prefix, ParameterSet<T>& out) const;

  Linear<T>& hidden() { return hidden_; }
  Linear<T>& output() { return output_; }

 private:
  Linear<T> hidden_;
  Linear<T> output_;
};

/// Linear identity classifier D -> n_identities.
template <typename T>
class IdentityClassifier {
 public:
  IdentityClassifier() = default;
  IdentityClassifier(int dim, int num_identities, Rng& rng);

  Var<T> operator()(const Var<T>& v) const;
  void collect(const std::string& prefix, ParameterSet<T>& out) const;
  int num_identities() const { return linear_.out_features(); }
  Linear<T>& linear() { return linear_; }

 private:
  Linear<T> linear_;
};

/// Evaluators W_HR / W_LR and classifiers C_HR / C_LR. Vectors of a
/// resolution (real or synthetic) share that resolution's heads.
template <typename T>
class SwaHeads {
 public:
  SwaHeads(int dim, int num_identities, bool with_evaluators, Rng& rng);

  bool has_evaluators() const { return with_evaluators_; }
  Var<T> evaluate(const ReidVectors<T>& v) const;
  Var<T> classify(const ReidVectors<T>& v) const;

  QualityEvaluator<T>& evaluator(Stream s) { return s == Stream::kHr ? w_hr_ : w_lr_; }
  IdentityClassifier<T>& classifier(Stream s) { return s == Stream::kHr ? c_hr_ : c_lr_; }

  /// Names: <prefix>.w_hr, .w_lr, .c_hr, .c_lr.
  void collect(const std::string& prefix, ParameterSet<T>& out) const;

 private:
  bool with_evaluators_;
  QualityEvaluator<T> w_hr_;
  QualityEvaluator<T> w_lr_;
  IdentityClassifier<T> c_hr_;
  IdentityClassifier<T> c_lr_;
};

/// Resolution a stream tag is evaluated and classified with.
Stream resolution_of(StreamTag tag);

/// Per-sample softmax cross-entropy, (N, 1, 1, 1). Throws LabelError.
template <typename T>
Var<T> cls_loss(const Var<T>& logits, std::span<const int> labels);

/// (wa*la + wb*lb) / (wa + wb), elementwise. Throws ContractError unless all weights are > 0.
template <typename T>
Var<T> weighted_pair(const Var<T>& wa, const Var<T>& la, const Var<T>& wb, const Var<T>& lb);

/// Batch mean of the two weighted pairs (HR, synthetic LR) and (LR, RAFT output).
template <typename T>
Var<T> swa_cls_loss(const StreamQuad<Var<T>>& weights, const StreamQuad<Var<T>>& losses);

template <typename T>
struct TripletResult {
  Var<T> loss;  // scalar
  std::size_t valid_triplets = 0;
  /// No (a, p, n) triple exists; the loss is then exactly zero.
  bool degenerate = false;
};

/// Hinge [m + D(a,p) - D(a,n)]_+ with Euclidean distances. Batch-all averages
/// over every valid triple; batch-hard averages over anchors using their
/// farthest positive and closest negative.
template <typename T>
TripletResult<T> triplet_loss(const Var<T>& vectors, std::span<const int> labels, T margin,
                              TripletMining mining = TripletMining::kBatchAll);

/// (w_hr*w'_hr*L_hr + w_lr*w'_lr*L_lr) / (w_hr*w'_hr + w_lr*w'_lr) with scalar weights.
template <typename T>
Var<T> swa_triplet_combine(const StreamQuad<Var<T>>& batch_weights, const Var<T>& hr_term,
                           const Var<T>& lr_term);

/// Mines the HR term over v_HR u v'_HR and the LR term over v_LR u v'_LR.
/// Weights are per-sample (N, 1, 1, 1) and averaged per stream.
template <typename T>
Var<T> swa_triplet_loss(const StreamQuad<Var<T>>& weights, const StreamQuad<Var<T>>& vectors,
                        const StreamQuad<std::vector<int>>& labels, T margin,
                        TripletMining mining = TripletMining::kBatchAll);

/// lambda1*cls + lambda2*tri + lambda3*raft. `raft` may be undefined (no
/// RAFT module). Throws DivergenceError naming the first non-finite component.
template <typename T>
Var<T> total_loss(const Var<T>& cls, const Var<T>& tri, const Var<T>& raft, const LossWeights& w);

}  // namespace ftwa

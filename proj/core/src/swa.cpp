#include "ftwa/swa.hpp"

#include <cmath>
#include <limits>

#include "ftwa/errors.hpp"
#include "ftwa/ops.hpp"

namespace ftwa {

void LossWeights::validate() const {
  if (!(lambda_cls >= 0 && lambda_tri >= 0 && lambda_raft >= 0)) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (!(margin >= 0)) throw ConfigError("triplet margin must be non-negative");
}

Stream resolution_of(StreamTag tag) {
  return (tag == StreamTag::kHr || tag == StreamTag::kSynthHr) ? Stream::kHr : Stream::kLr;
}

template <typename T>
ReidVectors<T> gap_flatten(const FeatureMap<T>& f) {
  return {ops::global_avg_pool(f.values), f.tag};
}

template <typename T>
QualityEvaluator<T>::QualityEvaluator(int dim, Rng& rng)
    : hidden_(dim, std::max(1, dim / 4), static_cast<T>(std::sqrt(2.0 / dim)), rng),
      output_(std::max(1, dim / 4), 1, static_cast<T>(0.01), rng) {}

template <typename T>
Var<T> QualityEvaluator<T>::operator()(const Var<T>& v) const {
  return ops::sigmoid(output_(ops::leaky_relu(hidden_(v), static_cast<T>(0.05))));
}

template <typename T>
void QualityEvaluator<T>::collect(const std::string& prefix, ParameterSet<T>& out) const {
  hidden_.collect(prefix + ".hidden", out);
  output_.collect(prefix + ".output", out);
}

template <typename T>
IdentityClassifier<T>::IdentityClassifier(int dim, int num_identities, Rng& rng)
    : linear_(dim, num_identities, static_cast<T>(0.01), rng) {}

template <typename T>
Var<T> IdentityClassifier<T>::operator()(const Var<T>& v) const {
  return linear_(v);
}

template <typename T>
void IdentityClassifier<T>::collect(const std::string& prefix, ParameterSet<T>& out) const {
  linear_.collect(prefix, out);
}

template <typename T>
SwaHeads<T>::SwaHeads(int dim, int num_identities, bool with_evaluators, Rng& rng)
    : with_evaluators_(with_evaluators) {
  if (num_identities < 2) throw ConfigError("need at least two training identities");
  if (with_evaluators_) {
    w_hr_ = QualityEvaluator<T>(dim, rng);
    w_lr_ = QualityEvaluator<T>(dim, rng);
  }
  c_hr_ = IdentityClassifier<T>(dim, num_identities, rng);
  c_lr_ = IdentityClassifier<T>(dim, num_identities, rng);
}

template <typename T>
Var<T> SwaHeads<T>::evaluate(const ReidVectors<T>& v) const {
  if (!with_evaluators_) throw ContractError("this model has no quality evaluators");
  return resolution_of(v.tag) == Stream::kHr ? w_hr_(v.values) : w_lr_(v.values);
}

template <typename T>
Var<T> SwaHeads<T>::classify(const ReidVectors<T>& v) const {
  return resolution_of(v.tag) == Stream::kHr ? c_hr_(v.values) : c_lr_(v.values);
}

template <typename T>
void SwaHeads<T>::collect(const std::string& prefix, ParameterSet<T>& out) const {
  if (with_evaluators_) {
    w_hr_.collect(prefix + ".w_hr", out);
    w_lr_.collect(prefix + ".w_lr", out);
  }
  c_hr_.collect(prefix + ".c_hr", out);
  c_lr_.collect(prefix + ".c_lr", out);
}

template <typename T>
Var<T> cls_loss(const Var<T>& logits, std::span<const int> labels) {
  return ops::softmax_cross_entropy(logits, labels);
}

namespace {

template <typename T>
void require_positive(const Var<T>& w, const char* what) {
  for (T v : w.value().values()) {
    if (!(v > T(0))) {
      throw ContractError(std::string(what) + ": quality weights must be strictly positive");
    }
  }
}

}  // namespace

template <typename T>
Var<T> weighted_pair(const Var<T>& wa, const Var<T>& la, const Var<T>& wb, const Var<T>& lb) {
  require_positive(wa, "weighted_pair");
  require_positive(wb, "weighted_pair");
  return ops::div(ops::add(ops::mul(wa, la), ops::mul(wb, lb)), ops::add(wa, wb));
}

template <typename T>
Var<T> swa_cls_loss(const StreamQuad<Var<T>>& weights, const StreamQuad<Var<T>>& losses) {
  const Var<T> hr_pair = weighted_pair(weights.hr, losses.hr, weights.synth_lr, losses.synth_lr);
  const Var<T> lr_pair = weighted_pair(weights.lr, losses.lr, weights.synth_hr, losses.synth_hr);
  return ops::mean(ops::add(hr_pair, lr_pair));
}

template <typename T>
TripletResult<T> triplet_loss(const Var<T>& vectors, std::span<const int> labels, T margin,
                              TripletMining mining) {
  const Shape s = vectors.shape();
  if (s.h != 1 || s.w != 1) throw ShapeError("triplet_loss expects (N,D,1,1), got " + s.str());
  if (labels.size() != static_cast<std::size_t>(s.n)) {
    throw ShapeError("triplet_loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(s.n) + " vectors");
  }
  const int n = s.n;
  const int d = s.c;
  const T* v = vectors.value().data();
  std::vector<T> dist(static_cast<std::size_t>(n) * n, T(0));
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      T acc = 0;
      for (int k = 0; k < d; ++k) {
        const T diff = v[i * d + k] - v[j * d + k];
        acc += diff * diff;
      }
      dist[i * n + j] = dist[j * n + i] = std::sqrt(acc);
    }
  }

  // Active hinge terms as (anchor, positive, negative) with unit coefficient.
  struct Triple {
    int a, p, ng;
  };
  std::vector<Triple> active;
  std::size_t count = 0;
  T total = 0;
  if (mining == TripletMining::kBatchAll) {
    for (int a = 0; a < n; ++a) {
      for (int p = 0; p < n; ++p) {
        if (p == a || labels[p] != labels[a]) continue;
        for (int ng = 0; ng < n; ++ng) {
          if (labels[ng] == labels[a]) continue;
          ++count;
          const T h = margin + dist[a * n + p] - dist[a * n + ng];
          if (h > T(0)) {
            total += h;
            active.push_back({a, p, ng});
          }
        }
      }
    }
  } else {
    for (int a = 0; a < n; ++a) {
      int hardest_p = -1, hardest_n = -1;
      for (int j = 0; j < n; ++j) {
        if (j == a) continue;
        if (labels[j] == labels[a]) {
          if (hardest_p < 0 || dist[a * n + j] > dist[a * n + hardest_p]) hardest_p = j;
        } else if (hardest_n < 0 || dist[a * n + j] < dist[a * n + hardest_n]) {
          hardest_n = j;
        }
      }
      if (hardest_p < 0 || hardest_n < 0) continue;
      ++count;
      const T h = margin + dist[a * n + hardest_p] - dist[a * n + hardest_n];
      if (h > T(0)) {
        total += h;
        active.push_back({a, hardest_p, hardest_n});
      }
    }
  }

  TripletResult<T> result;
  result.valid_triplets = count;
  if (count == 0) {
    result.degenerate = true;
    result.loss = Var<T>::constant(Tensor<T>(Shape{1, 1, 1, 1}));
    return result;
  }
  Tensor<T> out(Shape{1, 1, 1, 1});
  out[0] = total / static_cast<T>(count);
  auto dist_ptr = std::make_shared<std::vector<T>>(std::move(dist));
  result.loss = make_op<T>(
      std::move(out), {vectors},
      [active = std::move(active), dist_ptr, n, d, count](Node<T>& self) {
        Node<T>& in = *self.inputs[0];
        auto& g = in.grad_buffer();
        const T* x = in.value.data();
        const T scale = self.grad[0] / static_cast<T>(count);
        // d||xi - xj|| / dxi = (xi - xj) / ||xi - xj||, taken as 0 at coincident points.
        auto accumulate = [&](int i, int j, T sign) {
          const T len = (*dist_ptr)[i * n + j];
          if (len <= T(0)) return;
          const T c = sign * scale / len;
          for (int k = 0; k < d; ++k) {
            const T diff = x[i * d + k] - x[j * d + k];
            g[i * d + k] += c * diff;
            g[j * d + k] -= c * diff;
          }
        };
        for (const auto& t : active) {
          accumulate(t.a, t.p, T(1));
          accumulate(t.a, t.ng, T(-1));
        }
      });
  return result;
}

template <typename T>
Var<T> swa_triplet_combine(const StreamQuad<Var<T>>& w, const Var<T>& hr_term,
                           const Var<T>& lr_term) {
  require_positive(w.hr, "swa_triplet_loss");
  require_positive(w.synth_hr, "swa_triplet_loss");
  require_positive(w.lr, "swa_triplet_loss");
  require_positive(w.synth_lr, "swa_triplet_loss");
  const Var<T> a = ops::mul(w.hr, w.synth_hr);
  const Var<T> b = ops::mul(w.lr, w.synth_lr);
  return ops::div(ops::add(ops::mul(a, hr_term), ops::mul(b, lr_term)), ops::add(a, b));
}

template <typename T>
Var<T> swa_triplet_loss(const StreamQuad<Var<T>>& weights, const StreamQuad<Var<T>>& vectors,
                        const StreamQuad<std::vector<int>>& labels, T margin, TripletMining mining) {
  auto union_term = [&](const Var<T>& x, const std::vector<int>& lx, const Var<T>& y,
                        const std::vector<int>& ly) {
    std::vector<int> merged(lx);
    merged.insert(merged.end(), ly.begin(), ly.end());
    return triplet_loss<T>(ops::concat_batch(std::vector<Var<T>>{x, y}), merged, margin, mining).loss;
  };
  const Var<T> hr = union_term(vectors.hr, labels.hr, vectors.synth_hr, labels.synth_hr);
  const Var<T> lr = union_term(vectors.lr, labels.lr, vectors.synth_lr, labels.synth_lr);
  const StreamQuad<Var<T>> batch{ops::mean(weights.hr), ops::mean(weights.lr),
                                 ops::mean(weights.synth_hr), ops::mean(weights.synth_lr)};
  return swa_triplet_combine(batch, hr, lr);
}

template <typename T>
Var<T> total_loss(const Var<T>& cls, const Var<T>& tri, const Var<T>& raft, const LossWeights& w) {
  auto check = [](const Var<T>& v, const char* name) {
    if (!v.defined()) return;
    if (v.value().size() != 1) throw ShapeError(std::string("loss component ") + name + " is not a scalar");
    if (!std::isfinite(static_cast<double>(v.value()[0]))) {
      throw DivergenceError(name, std::string("loss component ") + name + " is not finite");
    }
  };
  check(cls, "cls");
  check(tri, "tri");
  check(raft, "raft");
  Var<T> total = ops::add(ops::scale(cls, static_cast<T>(w.lambda_cls)),
                          ops::scale(tri, static_cast<T>(w.lambda_tri)));
  if (raft.defined()) total = ops::add(total, ops::scale(raft, static_cast<T>(w.lambda_raft)));
  return total;
}

#define FTWA_INSTANTIATE_SWA(T)                                                                  \
  template ReidVectors<T> gap_flatten<T>(const FeatureMap<T>&);                                  \
  template class QualityEvaluator<T>;                                                            \
  template class IdentityClassifier<T>;                                                          \
  template class SwaHeads<T>;                                                                    \
  template Var<T> cls_loss<T>(const Var<T>&, std::span<const int>);                              \
  template Var<T> weighted_pair<T>(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&);  \
  template Var<T> swa_cls_loss<T>(const StreamQuad<Var<T>>&, const StreamQuad<Var<T>>&);         \
  template TripletResult<T> triplet_loss<T>(const Var<T>&, std::span<const int>, T,              \
                                            TripletMining);                                      \
  template Var<T> swa_triplet_combine<T>(const StreamQuad<Var<T>>&, const Var<T>&,               \
                                         const Var<T>&);                                         \
  template Var<T> swa_triplet_loss<T>(const StreamQuad<Var<T>>&, const StreamQuad<Var<T>>&,      \
                                      const StreamQuad<std::vector<int>>&, T, TripletMining);    \
  template Var<T> total_loss<T>(const Var<T>&, const Var<T>&, const Var<T>&, const LossWeights&);

FTWA_INSTANTIATE_SWA(float)
FTWA_INSTANTIATE_SWA(double)

}  // namespace ftwa

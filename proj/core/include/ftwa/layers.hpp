#pragma once

#include <string>
#include <vector>

#include "ftwa/autograd.hpp"
#include "ftwa/random.hpp"

namespace ftwa {

template <typename T>
struct NamedParameter {
  std::string name;
  Var<T> var;
};

/// Non-trainable state that still belongs in a checkpoint (running statistics).
template <typename T>
struct NamedBuffer {
  std::string name;
  Tensor<T>* tensor;
};

/// Flat, ordered view over a model's state. Names are dot-separated
/// namespaces such as "backbone.e_h.stem.conv.weight".
template <typename T>
struct ParameterSet {
  std::vector<NamedParameter<T>> parameters;
  std::vector<NamedBuffer<T>> buffers;

  void add(std::string name, const Var<T>& v) { parameters.push_back({std::move(name), v}); }
  void add_buffer(std::string name, Tensor<T>& t) { buffers.push_back({std::move(name), &t}); }

  std::size_t parameter_count() const;
  /// Parameters whose name starts with `prefix`.
  std::size_t parameter_count(const std::string& prefix) const;
  bool has_namespace(const std::string& prefix) const;
  const NamedParameter<T>* find(const std::string& name) const;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  /// Weights drawn from N(0, 2 / (out_channels * k * k)).
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias,
         Rng& rng);

  Var<T> operator()(const Var<T>& x) const;
  void collect(const std::string& prefix, ParameterSet<T>& out) const;

  Var<T>& weight() { return weight_; }
  Var<T>& bias() { return bias_; }
  int in_channels() const { return weight_.shape().c; }
  int out_channels() const { return weight_.shape().n; }

 private:
  Var<T> weight_;
  Var<T> bias_;
  int stride_ = 1;
  int padding_ = 0;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  /// `zero_scale` starts gamma at 0, making a residual branch an identity at init.
  BatchNorm2d(int channels, bool zero_scale = false);

  Var<T> operator()(const Var<T>& x, bool training);
  void collect(const std::string& prefix, ParameterSet<T>& out);

 private:
  Var<T> gamma_;
  Var<T> beta_;
  Tensor<T> running_mean_;
  Tensor<T> running_var_;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features, T init_std, Rng& rng, bool bias = true);

  Var<T> operator()(const Var<T>& x) const;
  void collect(const std::string& prefix, ParameterSet<T>& out) const;

  Var<T>& weight() { return weight_; }
  Var<T>& bias() { return bias_; }
  int in_features() const { return weight_.shape().c; }
  int out_features() const { return weight_.shape().n; }

 private:
  Var<T> weight_;
  Var<T> bias_;
};

}  // namespace ftwa

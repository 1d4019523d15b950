#pragma once

#include <span>
#include <vector>

#include "ftwa/autograd.hpp"

/// Differentiable tensor operations. Every op validates shapes and throws
/// ShapeError on mismatch; gradients are exact (no approximations).
namespace ftwa::ops {

// Elementwise, identical shapes.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> div(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
template <typename T> Var<T> sqrt(const Var<T>& a);

template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> leaky_relu(const Var<T>& x, T negative_slope);
template <typename T> Var<T> sigmoid(const Var<T>& x);

/// x: (N,Cin,H,W), weight: (Cout,Cin,k,k), bias: (1,Cout,1,1) or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride,
              int padding);

/// Per-channel batch normalization. In training mode batch statistics are
/// used and the running estimates are updated in place.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                  T momentum = T(0.1), T eps = T(1e-5));

template <typename T>
Var<T> max_pool2d(const Var<T>& x, int kernel, int stride, int padding);

/// (N,C,H,W) -> (N,C,1,1) spatial mean.
template <typename T> Var<T> global_avg_pool(const Var<T>& x);

/// x: (N,D,1,1), weight: (Out,D,1,1), bias: (1,Out,1,1) or undefined.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// x: (N,C,H,W) scaled per (sample, channel) by g: (N,C,1,1).
template <typename T> Var<T> mul_channelwise(const Var<T>& x, const Var<T>& g);

template <typename T> Var<T> concat_channels(std::span<const Var<T>> xs);
template <typename T> Var<T> slice_channels(const Var<T>& x, int begin, int count);
template <typename T> Var<T> concat_batch(std::span<const Var<T>> xs);
template <typename T> Var<T> slice_batch(const Var<T>& x, int begin, int count);

template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);

/// Mean absolute elementwise difference.
template <typename T> Var<T> l1_mean(const Var<T>& a, const Var<T>& b);

/// Per-sample softmax cross-entropy. logits: (N,K,1,1) -> (N,1,1,1).
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels);

/// Convenience overloads.
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  return concat_channels<T>(std::span<const Var<T>>(xs));
}
template <typename T>
Var<T> concat_batch(const std::vector<Var<T>>& xs) {
  return concat_batch<T>(std::span<const Var<T>>(xs));
}

}  // namespace ftwa::ops

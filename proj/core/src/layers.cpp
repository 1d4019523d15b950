#include "ftwa/layers.hpp"

#include <cmath>

#include "ftwa/ops.hpp"

namespace ftwa {

namespace {

template <typename T>
Tensor<T> normal_tensor(Shape shape, double std, Rng& rng) {
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(std * normal01(rng));
  return t;
}

}  // namespace

template <typename T>
std::size_t ParameterSet<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : parameters) total += p.var.value().size();
  return total;
}

template <typename T>
std::size_t ParameterSet<T>::parameter_count(const std::string& prefix) const {
  std::size_t total = 0;
  for (const auto& p : parameters) {
    if (p.name.rfind(prefix, 0) == 0) total += p.var.value().size();
  }
  return total;
}

template <typename T>
bool ParameterSet<T>::has_namespace(const std::string& prefix) const {
  for (const auto& p : parameters) {
    if (p.name.rfind(prefix, 0) == 0) return true;
  }
  return false;
}

template <typename T>
const NamedParameter<T>* ParameterSet<T>::find(const std::string& name) const {
  for (const auto& p : parameters) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <typename T>
Conv2d<T>::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding,
                  bool bias, Rng& rng)
    : stride_(stride), padding_(padding) {
  const double std = std::sqrt(2.0 / (out_channels * kernel * kernel));
  weight_ = Var<T>::leaf(normal_tensor<T>(Shape{out_channels, in_channels, kernel, kernel}, std, rng));
  if (bias) bias_ = Var<T>::leaf(Tensor<T>(Shape{1, out_channels, 1, 1}));
}

template <typename T>
Var<T> Conv2d<T>::operator()(const Var<T>& x) const {
  return ops::conv2d(x, weight_, bias_, stride_, padding_);
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, ParameterSet<T>& out) const {
  out.add(prefix + ".weight", weight_);
  if (bias_.defined()) out.add(prefix + ".bias", bias_);
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int channels, bool zero_scale)
    : gamma_(Var<T>::leaf(Tensor<T>(Shape{1, channels, 1, 1}, zero_scale ? T(0) : T(1)))),
      beta_(Var<T>::leaf(Tensor<T>(Shape{1, channels, 1, 1}))),
      running_mean_(Shape{1, channels, 1, 1}),
      running_var_(Shape{1, channels, 1, 1}, T(1)) {}

template <typename T>
Var<T> BatchNorm2d<T>::operator()(const Var<T>& x, bool training) {
  return ops::batch_norm(x, gamma_, beta_, running_mean_, running_var_, training);
}

template <typename T>
void BatchNorm2d<T>::collect(const std::string& prefix, ParameterSet<T>& out) {
  out.add(prefix + ".gamma", gamma_);
  out.add(prefix + ".beta", beta_);
  out.add_buffer(prefix + ".running_mean", running_mean_);
  out.add_buffer(prefix + ".running_var", running_var_);
}

template <typename T>
Linear<T>::Linear(int in_features, int out_features, T init_std, Rng& rng, bool bias) {
  weight_ = Var<T>::leaf(normal_tensor<T>(Shape{out_features, in_features, 1, 1}, init_std, rng));
  if (bias) bias_ = Var<T>::leaf(Tensor<T>(Shape{1, out_features, 1, 1}));
}

template <typename T>
Var<T> Linear<T>::operator()(const Var<T>& x) const {
  return ops::linear(x, weight_, bias_);
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParameterSet<T>& out) const {
  out.add(prefix + ".weight", weight_);
  if (bias_.defined()) out.add(prefix + ".bias", bias_);
}

template struct ParameterSet<float>;
template struct ParameterSet<double>;
template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class Linear<float>;
template class Linear<double>;

}  // namespace ftwa

#include "ftwa/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "ftwa/errors.hpp"

namespace ftwa::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Node<T>& input(Node<T>& self, std::size_t i) {
  return *self.inputs[i];
}

template <typename T>
bool wants(const Node<T>& self, std::size_t i) {
  return self.inputs[i]->requires_grad;
}

template <typename T, typename Fwd, typename Deriv>
Var<T> elementwise(const Var<T>& x, Fwd fwd, Deriv deriv) {
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make_op<T>(std::move(out), {x}, [deriv](Node<T>& self) {
    Node<T>& in = input(self, 0);
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * deriv(in.value[i], self.value[i]);
    }
  });
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (wants(self, k)) input(self, k).grad_buffer() += self.grad;
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (wants(self, 0)) input(self, 0).grad_buffer() += self.grad;
    if (wants(self, 1)) {
      auto& g = input(self, 1).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>& na = input(self, 0);
    Node<T>& nb = input(self, 1);
    if (na.requires_grad) {
      auto& g = na.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.value[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.value[i];
    }
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "div");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] / b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>& na = input(self, 0);
    Node<T>& nb = input(self, 1);
    if (na.requires_grad) {
      auto& g = na.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / nb.value[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] -= self.grad[i] * self.value[i] / nb.value[i];
      }
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * factor;
  return make_op<T>(std::move(out), {a}, [factor](Node<T>& self) {
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Var<T> sqrt(const Var<T>& a) {
  return elementwise<T>(
      a, [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return elementwise<T>(
      x, [](T v) { return v > 0 ? v : T(0); }, [](T v, T) { return v > 0 ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  return elementwise<T>(
      x, [slope](T v) { return v > 0 ? v : slope * v; },
      [slope](T v, T) { return v > 0 ? T(1) : slope; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return elementwise<T>(
      x,
      [](T v) {
        // Split by sign so exp never overflows.
        if (v >= 0) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride,
              int padding) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c || ws.h != ws.w) {
    throw ShapeError("conv2d: input " + xs.str() + " incompatible with weight " + ws.str());
  }
  if (bias.defined()) require_same_shape(Shape{1, ws.n, 1, 1}, bias.shape(), "conv2d bias");
  const int k = ws.h;
  const int ho = (xs.h + 2 * padding - k) / stride + 1;
  const int wo = (xs.w + 2 * padding - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: empty output for input " + xs.str());

  const int cout = ws.n;
  const int kdim = xs.c * k * k;
  const std::size_t positions = static_cast<std::size_t>(ho) * wo;
  const std::size_t m = positions * xs.n;

  auto col = std::make_shared<std::vector<T>>(static_cast<std::size_t>(kdim) * m);
  const T* xd = x.value().data();
  for (int ci = 0; ci < xs.c; ++ci) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = col->data() + static_cast<std::size_t>((ci * k + ki) * k + kj) * m;
        for (int n = 0; n < xs.n; ++n) {
          const T* plane = xd + (static_cast<std::size_t>(n) * xs.c + ci) * xs.plane();
          T* dst = row + n * positions;
          for (int oh = 0; oh < ho; ++oh) {
            const int ih = oh * stride - padding + ki;
            T* out_row = dst + oh * wo;
            if (ih < 0 || ih >= xs.h) {
              std::fill(out_row, out_row + wo, T(0));
              continue;
            }
            const T* in_row = plane + static_cast<std::size_t>(ih) * xs.w;
            for (int ow = 0; ow < wo; ++ow) {
              const int iw = ow * stride - padding + kj;
              out_row[ow] = (iw >= 0 && iw < xs.w) ? in_row[iw] : T(0);
            }
          }
        }
      }
    }
  }

  Eigen::Map<const RowMat<T>> wmat(weight.value().data(), cout, kdim);
  Eigen::Map<const RowMat<T>> cmat(col->data(), kdim, static_cast<Eigen::Index>(m));
  RowMat<T> prod = wmat * cmat;

  Tensor<T> out(Shape{xs.n, cout, ho, wo});
  for (int n = 0; n < xs.n; ++n) {
    for (int co = 0; co < cout; ++co) {
      const T b = bias.defined() ? bias.value()[co] : T(0);
      const T* src = prod.data() + static_cast<std::size_t>(co) * m + n * positions;
      T* dst = out.data() + (static_cast<std::size_t>(n) * cout + co) * positions;
      for (std::size_t p = 0; p < positions; ++p) dst[p] = src[p] + b;
    }
  }

  std::vector<Var<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  if (!weight.requires_grad()) col.reset();
  return make_op<T>(std::move(out), std::move(inputs), [=](Node<T>& self) {
    RowMat<T> dout(cout, static_cast<Eigen::Index>(m));
    for (int n = 0; n < xs.n; ++n) {
      for (int co = 0; co < cout; ++co) {
        const T* src = self.grad.data() + (static_cast<std::size_t>(n) * cout + co) * positions;
        std::copy(src, src + positions, dout.data() + static_cast<std::size_t>(co) * m + n * positions);
      }
    }
    Node<T>& nx = input(self, 0);
    Node<T>& nw = input(self, 1);
    if (nw.requires_grad) {
      Eigen::Map<const RowMat<T>> cm(col->data(), kdim, static_cast<Eigen::Index>(m));
      Eigen::Map<RowMat<T>> gw(nw.grad_buffer().data(), cout, kdim);
      gw.noalias() += dout * cm.transpose();
    }
    if (self.inputs.size() > 2 && wants(self, 2)) {
      auto& gb = input(self, 2).grad_buffer();
      for (int co = 0; co < cout; ++co) gb[co] += dout.row(co).sum();
    }
    if (nx.requires_grad) {
      Eigen::Map<const RowMat<T>> wm(nw.value.data(), cout, kdim);
      RowMat<T> dcol = wm.transpose() * dout;
      T* gx = nx.grad_buffer().data();
      for (int ci = 0; ci < xs.c; ++ci) {
        for (int ki = 0; ki < k; ++ki) {
          for (int kj = 0; kj < k; ++kj) {
            const T* row = dcol.data() + static_cast<std::size_t>((ci * k + ki) * k + kj) * m;
            for (int n = 0; n < xs.n; ++n) {
              T* plane = gx + (static_cast<std::size_t>(n) * xs.c + ci) * xs.plane();
              const T* src = row + n * positions;
              for (int oh = 0; oh < ho; ++oh) {
                const int ih = oh * stride - padding + ki;
                if (ih < 0 || ih >= xs.h) continue;
                T* in_row = plane + static_cast<std::size_t>(ih) * xs.w;
                for (int ow = 0; ow < wo; ++ow) {
                  const int iw = ow * stride - padding + kj;
                  if (iw >= 0 && iw < xs.w) in_row[iw] += src[oh * wo + ow];
                }
              }
            }
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  Tensor<T>& running_mean, Tensor<T>& running_var, bool training, T momentum,
                  T eps) {
  const Shape s = x.shape();
  const Shape cs{1, s.c, 1, 1};
  require_same_shape(cs, gamma.shape(), "batch_norm gamma");
  require_same_shape(cs, beta.shape(), "batch_norm beta");
  require_same_shape(cs, running_mean.shape(), "batch_norm running_mean");
  require_same_shape(cs, running_var.shape(), "batch_norm running_var");
  const std::size_t plane = s.plane();
  const std::size_t count = plane * s.n;
  if (training && count < 2) throw ShapeError("batch_norm: need more than one value per channel");

  std::vector<T> mean(s.c), invstd(s.c);
  for (int c = 0; c < s.c; ++c) {
    if (training) {
      double acc = 0;
      for (int n = 0; n < s.n; ++n) {
        const T* p = x.value().data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      }
      const double mu = acc / count;
      double sq = 0;
      for (int n = 0; n < s.n; ++n) {
        const T* p = x.value().data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      const double var = sq / count;
      mean[c] = static_cast<T>(mu);
      invstd[c] = static_cast<T>(1.0 / std::sqrt(var + eps));
      running_mean[c] = (1 - momentum) * running_mean[c] + momentum * static_cast<T>(mu);
      running_var[c] = (1 - momentum) * running_var[c] +
                       momentum * static_cast<T>(sq / static_cast<double>(count - 1));
    } else {
      mean[c] = running_mean[c];
      invstd[c] = T(1) / std::sqrt(running_var[c] + eps);
    }
  }

  Tensor<T> out(s);
  auto xhat = std::make_shared<Tensor<T>>(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
      const T g = gamma.value()[c];
      const T b = beta.value()[c];
      for (std::size_t i = 0; i < plane; ++i) {
        const T h = (x.value()[off + i] - mean[c]) * invstd[c];
        (*xhat)[off + i] = h;
        out[off + i] = g * h + b;
      }
    }
  }

  return make_op<T>(std::move(out), {x, gamma, beta}, [=](Node<T>& self) {
    const Tensor<T>& dy = self.grad;
    std::vector<T> sum_dy(s.c, T(0)), sum_dy_xhat(s.c, T(0));
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy[c] += dy[off + i];
          sum_dy_xhat[c] += dy[off + i] * (*xhat)[off + i];
        }
      }
    }
    Node<T>& ng = input(self, 1);
    Node<T>& nb = input(self, 2);
    if (ng.requires_grad) {
      auto& g = ng.grad_buffer();
      for (int c = 0; c < s.c; ++c) g[c] += sum_dy_xhat[c];
    }
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (int c = 0; c < s.c; ++c) g[c] += sum_dy[c];
    }
    Node<T>& nx = input(self, 0);
    if (!nx.requires_grad) return;
    auto& gx = nx.grad_buffer();
    const T inv_count = T(1) / static_cast<T>(count);
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
        const T gscale = ng.value[c] * invstd[c];
        for (std::size_t i = 0; i < plane; ++i) {
          if (training) {
            gx[off + i] += gscale * (dy[off + i] - inv_count * sum_dy[c] -
                                     (*xhat)[off + i] * inv_count * sum_dy_xhat[c]);
          } else {
            gx[off + i] += gscale * dy[off + i];
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> max_pool2d(const Var<T>& x, int kernel, int stride, int padding) {
  const Shape s = x.shape();
  const int ho = (s.h + 2 * padding - kernel) / stride + 1;
  const int wo = (s.w + 2 * padding - kernel) / stride + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("max_pool2d: empty output for input " + s.str());
  Tensor<T> out(Shape{s.n, s.c, ho, wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * s.plane();
      for (int oh = 0; oh < ho; ++oh) {
        for (int ow = 0; ow < wo; ++ow) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t where = base;
          for (int ki = 0; ki < kernel; ++ki) {
            const int ih = oh * stride - padding + ki;
            if (ih < 0 || ih >= s.h) continue;
            for (int kj = 0; kj < kernel; ++kj) {
              const int iw = ow * stride - padding + kj;
              if (iw < 0 || iw >= s.w) continue;
              const std::size_t idx = base + static_cast<std::size_t>(ih) * s.w + iw;
              if (x.value()[idx] > best) {
                best = x.value()[idx];
                where = idx;
              }
            }
          }
          const std::size_t o = out.shape().plane() * (static_cast<std::size_t>(n) * s.c + c) +
                                static_cast<std::size_t>(oh) * wo + ow;
          out[o] = best;
          (*argmax)[o] = where;
        }
      }
    }
  }
  return make_op<T>(std::move(out), {x}, [argmax](Node<T>& self) {
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t o = 0; o < argmax->size(); ++o) g[(*argmax)[o]] += self.grad[o];
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T* p = x.value().data() + i * plane;
    T acc = 0;
    for (std::size_t j = 0; j < plane; ++j) acc += p[j];
    out[i] = acc / static_cast<T>(plane);
  }
  return make_op<T>(std::move(out), {x}, [plane](Node<T>& self) {
    auto& g = input(self, 0).grad_buffer();
    const T inv = T(1) / static_cast<T>(plane);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      T* p = g.data() + i * plane;
      for (std::size_t j = 0; j < plane; ++j) p[j] += self.grad[i] * inv;
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (xs.h != 1 || xs.w != 1 || ws.h != 1 || ws.w != 1 || ws.c != xs.c) {
    throw ShapeError("linear: input " + xs.str() + " incompatible with weight " + ws.str());
  }
  if (bias.defined()) require_same_shape(Shape{1, ws.n, 1, 1}, bias.shape(), "linear bias");
  const int out_dim = ws.n;
  Eigen::Map<const RowMat<T>> xm(x.value().data(), xs.n, xs.c);
  Eigen::Map<const RowMat<T>> wm(weight.value().data(), out_dim, xs.c);
  Tensor<T> out(Shape{xs.n, out_dim, 1, 1});
  Eigen::Map<RowMat<T>> om(out.data(), xs.n, out_dim);
  om.noalias() = xm * wm.transpose();
  if (bias.defined()) {
    for (int n = 0; n < xs.n; ++n) {
      for (int o = 0; o < out_dim; ++o) om(n, o) += bias.value()[o];
    }
  }
  std::vector<Var<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_op<T>(std::move(out), std::move(inputs), [=](Node<T>& self) {
    Eigen::Map<const RowMat<T>> dy(self.grad.data(), xs.n, out_dim);
    Node<T>& nx = input(self, 0);
    Node<T>& nw = input(self, 1);
    if (nx.requires_grad) {
      Eigen::Map<const RowMat<T>> w(nw.value.data(), out_dim, xs.c);
      Eigen::Map<RowMat<T>> gx(nx.grad_buffer().data(), xs.n, xs.c);
      gx.noalias() += dy * w;
    }
    if (nw.requires_grad) {
      Eigen::Map<const RowMat<T>> xv(nx.value.data(), xs.n, xs.c);
      Eigen::Map<RowMat<T>> gw(nw.grad_buffer().data(), out_dim, xs.c);
      gw.noalias() += dy.transpose() * xv;
    }
    if (self.inputs.size() > 2 && wants(self, 2)) {
      auto& gb = input(self, 2).grad_buffer();
      for (int o = 0; o < out_dim; ++o) gb[o] += dy.col(o).sum();
    }
  });
}

template <typename T>
Var<T> mul_channelwise(const Var<T>& x, const Var<T>& g) {
  const Shape s = x.shape();
  require_same_shape(Shape{s.n, s.c, 1, 1}, g.shape(), "mul_channelwise gate");
  const std::size_t plane = s.plane();
  Tensor<T> out(s);
  for (std::size_t i = 0; i < g.value().size(); ++i) {
    const T f = g.value()[i];
    for (std::size_t j = 0; j < plane; ++j) out[i * plane + j] = x.value()[i * plane + j] * f;
  }
  return make_op<T>(std::move(out), {x, g}, [plane](Node<T>& self) {
    Node<T>& nx = input(self, 0);
    Node<T>& ng = input(self, 1);
    const std::size_t groups = ng.value.size();
    if (nx.requires_grad) {
      auto& gx = nx.grad_buffer();
      for (std::size_t i = 0; i < groups; ++i) {
        for (std::size_t j = 0; j < plane; ++j) {
          gx[i * plane + j] += self.grad[i * plane + j] * ng.value[i];
        }
      }
    }
    if (ng.requires_grad) {
      auto& gg = ng.grad_buffer();
      for (std::size_t i = 0; i < groups; ++i) {
        T acc = 0;
        for (std::size_t j = 0; j < plane; ++j) {
          acc += self.grad[i * plane + j] * nx.value[i * plane + j];
        }
        gg[i] += acc;
      }
    }
  });
}

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape first = xs[0].shape();
  int channels = 0;
  for (const auto& v : xs) {
    const Shape s = v.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: " + s.str() + " incompatible with " + first.str());
    }
    channels += s.c;
  }
  const std::size_t plane = first.plane();
  Tensor<T> out(Shape{first.n, channels, first.h, first.w});
  std::vector<int> offsets;
  int offset = 0;
  for (const auto& v : xs) {
    offsets.push_back(offset);
    const int c = v.shape().c;
    for (int n = 0; n < first.n; ++n) {
      const T* src = v.value().data() + static_cast<std::size_t>(n) * c * plane;
      std::copy(src, src + c * plane,
                out.data() + (static_cast<std::size_t>(n) * channels + offset) * plane);
    }
    offset += c;
  }
  std::vector<Var<T>> inputs(xs.begin(), xs.end());
  return make_op<T>(std::move(out), std::move(inputs), [=](Node<T>& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      Node<T>& in = input(self, k);
      if (!in.requires_grad) continue;
      const int c = in.value.shape().c;
      auto& g = in.grad_buffer();
      for (int n = 0; n < first.n; ++n) {
        const T* src =
            self.grad.data() + (static_cast<std::size_t>(n) * channels + offsets[k]) * plane;
        T* dst = g.data() + static_cast<std::size_t>(n) * c * plane;
        for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, int begin, int count) {
  const Shape s = x.shape();
  if (begin < 0 || count <= 0 || begin + count > s.c) {
    throw ShapeError("slice_channels: [" + std::to_string(begin) + "," +
                     std::to_string(begin + count) + ") outside " + s.str());
  }
  const std::size_t plane = s.plane();
  Tensor<T> out(Shape{s.n, count, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    const T* src = x.value().data() + (static_cast<std::size_t>(n) * s.c + begin) * plane;
    std::copy(src, src + count * plane, out.data() + static_cast<std::size_t>(n) * count * plane);
  }
  return make_op<T>(std::move(out), {x}, [=](Node<T>& self) {
    auto& g = input(self, 0).grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      T* dst = g.data() + (static_cast<std::size_t>(n) * s.c + begin) * plane;
      const T* src = self.grad.data() + static_cast<std::size_t>(n) * count * plane;
      for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> concat_batch(std::span<const Var<T>> xs) {
  if (xs.empty()) throw ShapeError("concat_batch: no inputs");
  const Shape first = xs[0].shape();
  int total = 0;
  for (const auto& v : xs) {
    const Shape s = v.shape();
    if (s.c != first.c || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_batch: " + s.str() + " incompatible with " + first.str());
    }
    total += s.n;
  }
  Tensor<T> out(Shape{total, first.c, first.h, first.w});
  std::size_t pos = 0;
  for (const auto& v : xs) {
    std::copy(v.value().data(), v.value().data() + v.value().size(), out.data() + pos);
    pos += v.value().size();
  }
  std::vector<Var<T>> inputs(xs.begin(), xs.end());
  return make_op<T>(std::move(out), std::move(inputs), [](Node<T>& self) {
    std::size_t at = 0;
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      Node<T>& in = input(self, k);
      const std::size_t len = in.value.size();
      if (in.requires_grad) {
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[at + i];
      }
      at += len;
    }
  });
}

template <typename T>
Var<T> slice_batch(const Var<T>& x, int begin, int count) {
  const Shape s = x.shape();
  if (begin < 0 || count <= 0 || begin + count > s.n) {
    throw ShapeError("slice_batch: [" + std::to_string(begin) + "," +
                     std::to_string(begin + count) + ") outside " + s.str());
  }
  const std::size_t per = s.sample();
  Tensor<T> out(Shape{count, s.c, s.h, s.w});
  std::copy(x.value().data() + begin * per, x.value().data() + (begin + count) * per, out.data());
  return make_op<T>(std::move(out), {x}, [=](Node<T>& self) {
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t i = 0; i < count * per; ++i) g[begin * per + i] += self.grad[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc = 0;
  for (T v : x.value().values()) acc += v;
  return make_op<T>(Tensor<T>::scalar(acc), {x}, [](Node<T>& self) {
    auto& g = input(self, 0).grad_buffer();
    const T d = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += d;
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.value().size()));
}

template <typename T>
Var<T> l1_mean(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "l1_mean");
  const std::size_t count = a.value().size();
  T acc = 0;
  for (std::size_t i = 0; i < count; ++i) acc += std::abs(a.value()[i] - b.value()[i]);
  return make_op<T>(Tensor<T>::scalar(acc / static_cast<T>(count)), {a, b},
                    [count](Node<T>& self) {
                      Node<T>& na = input(self, 0);
                      Node<T>& nb = input(self, 1);
                      const T d = self.grad[0] / static_cast<T>(count);
                      for (std::size_t i = 0; i < count; ++i) {
                        const T diff = na.value[i] - nb.value[i];
                        const T sgn = diff > 0 ? T(1) : (diff < 0 ? T(-1) : T(0));
                        if (na.requires_grad) na.grad_buffer()[i] += d * sgn;
                        if (nb.requires_grad) nb.grad_buffer()[i] -= d * sgn;
                      }
                    });
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  const Shape s = logits.shape();
  if (s.h != 1 || s.w != 1) throw ShapeError("softmax_cross_entropy: logits " + s.str());
  if (labels.size() != static_cast<std::size_t>(s.n)) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(s.n) + " rows");
  }
  const int k = s.c;
  auto probs = std::make_shared<Tensor<T>>(s);
  Tensor<T> out(Shape{s.n, 1, 1, 1});
  std::vector<int> ys(labels.begin(), labels.end());
  for (int n = 0; n < s.n; ++n) {
    if (ys[n] < 0 || ys[n] >= k) {
      throw LabelError("label " + std::to_string(ys[n]) + " outside vocabulary of size " +
                       std::to_string(k));
    }
    const T* row = logits.value().data() + static_cast<std::size_t>(n) * k;
    const T mx = *std::max_element(row, row + k);
    T z = 0;
    for (int j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const T lse = mx + std::log(z);
    for (int j = 0; j < k; ++j) (*probs)[n * k + j] = std::exp(row[j] - lse);
    out[n] = lse - row[ys[n]];
  }
  return make_op<T>(std::move(out), {logits}, [=](Node<T>& self) {
    auto& g = input(self, 0).grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      const T d = self.grad[n];
      for (int j = 0; j < k; ++j) {
        g[n * k + j] += d * ((*probs)[n * k + j] - (j == ys[n] ? T(1) : T(0)));
      }
    }
  });
}

#define FTWA_INSTANTIATE_OPS(T)                                                              \
  template Var<T> add(const Var<T>&, const Var<T>&);                                         \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                         \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                         \
  template Var<T> div(const Var<T>&, const Var<T>&);                                         \
  template Var<T> scale(const Var<T>&, T);                                                   \
  template Var<T> sqrt(const Var<T>&);                                                       \
  template Var<T> relu(const Var<T>&);                                                       \
  template Var<T> leaky_relu(const Var<T>&, T);                                              \
  template Var<T> sigmoid(const Var<T>&);                                                    \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int);             \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>&,        \
                             Tensor<T>&, bool, T, T);                                        \
  template Var<T> max_pool2d(const Var<T>&, int, int, int);                                  \
  template Var<T> global_avg_pool(const Var<T>&);                                            \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                       \
  template Var<T> mul_channelwise(const Var<T>&, const Var<T>&);                             \
  template Var<T> concat_channels(std::span<const Var<T>>);                                  \
  template Var<T> slice_channels(const Var<T>&, int, int);                                   \
  template Var<T> concat_batch(std::span<const Var<T>>);                                     \
  template Var<T> slice_batch(const Var<T>&, int, int);                                      \
  template Var<T> sum(const Var<T>&);                                                        \
  template Var<T> mean(const Var<T>&);                                                       \
  template Var<T> l1_mean(const Var<T>&, const Var<T>&);                                     \
  template Var<T> softmax_cross_entropy(const Var<T>&, std::span<const int>);

FTWA_INSTANTIATE_OPS(float)
FTWA_INSTANTIATE_OPS(double)

}  // namespace ftwa::ops

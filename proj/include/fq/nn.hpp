// Copyright 2026 The fqlib Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <type_traits>
#include <string>
#include <vector>

#include "fq/error.hpp"
#include "fq/model_store.hpp"
#include "fq/rng.hpp"

// Minimal training backend: conv (im2col + GEMM), BN, ReLU, global average
// pooling, dense and softmax cross-entropy with hand-written gradients.
namespace fq::nn {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline constexpr double kBnMomentum = 0.1;

template <class T>
struct Layer {
  LayerSpec meta;  // name, kind and geometry; meta.weight is left empty
  Shape weight_shape;
  std::vector<T> w, gw;
  std::vector<T> bias, gbias;
  std::vector<T> gamma, beta, ggamma, gbeta, run_mean, run_var;
  bool relu = true;
  bool batch_stats = false;  // BN mode used by the last forward

  // Forward caches.
  std::size_t in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  std::vector<RowMat<T>> cols;
  std::vector<T> input;  // dense input
  std::vector<T> xhat, inv_std, out;

  bool has_bn() const { return !gamma.empty(); }
  bool has_bias() const { return !bias.empty(); }
  std::size_t fan_in() const { return meta.fan_in(); }
  std::size_t out_channels() const { return meta.out_channels; }
};

template <class T>
class Net {
 public:
  std::vector<Layer<T>> layers;
  // Training forwards normalise with the running BN statistics and leave them
  // untouched; gamma and beta still learn.
  bool freeze_bn = false;

  static Net from_model(const Model& m) {
    require(!m.layers.empty(), ErrorKind::kInvalidArgument, "model has no layers");
    Net net;
    bool seen_dense = false;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
      const LayerSpec& s = m.layers[i];
      s.validate();
      if (s.kind == LayerKind::kDense) seen_dense = true;
      else require(!seen_dense, ErrorKind::kInvalidArgument, "conv layer " + s.name + " follows a dense layer");
      Layer<T> l;
      l.meta = s;
      l.meta.weight = Tensor();
      l.weight_shape = s.weight.shape();
      l.w.assign(s.weight.data().begin(), s.weight.data().end());
      l.gw.assign(l.w.size(), T(0));
      if (s.bias) {
        l.bias.assign(s.bias->begin(), s.bias->end());
        l.gbias.assign(l.bias.size(), T(0));
      }
      if (s.bn) {
        l.gamma.assign(s.bn->scale.begin(), s.bn->scale.end());
        l.beta.assign(s.bn->offset.begin(), s.bn->offset.end());
        l.run_mean.assign(s.bn->mean.begin(), s.bn->mean.end());
        l.run_var.assign(s.bn->variance.begin(), s.bn->variance.end());
        l.ggamma.assign(l.gamma.size(), T(0));
        l.gbeta.assign(l.beta.size(), T(0));
      }
      l.relu = !(i + 1 == m.layers.size() && s.kind == LayerKind::kDense);
      net.layers.push_back(std::move(l));
    }
    return net;
  }

  Model to_model() const {
    Model m;
    for (const auto& l : layers) {
      LayerSpec s = l.meta;
      s.weight = Tensor(l.weight_shape, std::vector<float>(l.w.begin(), l.w.end()));
      if (l.has_bias()) s.bias = std::vector<float>(l.bias.begin(), l.bias.end());
      if (l.has_bn())
        s.bn = BatchNorm{std::vector<float>(l.gamma.begin(), l.gamma.end()),
                         std::vector<float>(l.beta.begin(), l.beta.end()),
                         std::vector<float>(l.run_mean.begin(), l.run_mean.end()),
                         std::vector<float>(l.run_var.begin(), l.run_var.end())};
      m.layers.push_back(std::move(s));
    }
    return m;
  }

  void zero_grad() {
    for (auto& l : layers) {
      std::fill(l.gw.begin(), l.gw.end(), T(0));
      std::fill(l.gbias.begin(), l.gbias.end(), T(0));
      std::fill(l.ggamma.begin(), l.ggamma.end(), T(0));
      std::fill(l.gbeta.begin(), l.gbeta.end(), T(0));
    }
  }

  // Logits (n x classes) for n images of shape `image` (C, H, W) or a flat
  // vector. `train` selects batch statistics for BN and fills the caches.
  std::vector<T> forward(std::span<const T> images, std::size_t n, const Shape& image, bool train) {
    std::vector<T> x(images.begin(), images.end());
    Shape shape = image;
    bool pooled = false;
    for (auto& l : layers) {
      if (l.meta.kind == LayerKind::kDense && !pooled && shape.size() == 3) {
        if (&l != &layers.front()) {
          x = pool_forward(x, n, shape);
          pooled = true;
        }
        shape = {element_count(shape)};
      }
      const bool batch = train && !freeze_bn;
      x = l.meta.kind == LayerKind::kConv2d ? conv_forward(l, x, n, shape, batch) : dense_forward(l, x, n, batch);
    }
    if (layers.back().meta.kind == LayerKind::kConv2d) {
      pooled_shape_ = shape;
      x = pool_forward(x, n, shape);
    }
    return x;
  }

  // Backward from d(loss)/d(logits); accumulates parameter gradients.
  void backward(std::vector<T> grad, std::size_t n) {
    if (layers.back().meta.kind == LayerKind::kConv2d) grad = pool_backward(grad, n, pooled_shape_);
    for (std::size_t i = layers.size(); i-- > 0;) {
      auto& l = layers[i];
      if (l.meta.kind == LayerKind::kConv2d) {
        grad = conv_backward(l, grad, n, i > 0);
      } else {
        grad = dense_backward(l, grad, n);
        const bool pool_here = i > 0 && layers[i - 1].meta.kind == LayerKind::kConv2d;
        if (pool_here) grad = pool_backward(grad, n, {layers[i - 1].out_channels(), layers[i - 1].out_h, layers[i - 1].out_w});
      }
    }
  }

  std::size_t num_classes() const {
    const auto& l = layers.back();
    return l.out_channels();
  }

 private:
  Shape pooled_shape_;

  static std::vector<T> pool_forward(const std::vector<T>& x, std::size_t n, const Shape& shape) {
    const std::size_t c = shape[0], p = shape[1] * shape[2];
    std::vector<T> y(n * c, T(0));
    for (std::size_t i = 0; i < n * c; ++i) {
      T s(0);
      for (std::size_t j = 0; j < p; ++j) s += x[i * p + j];
      y[i] = s / static_cast<T>(p);
    }
    return y;
  }

  static std::vector<T> pool_backward(const std::vector<T>& g, std::size_t n, const Shape& shape) {
    const std::size_t c = shape[0], p = shape[1] * shape[2];
    std::vector<T> dx(n * c * p);
    for (std::size_t i = 0; i < n * c; ++i)
      for (std::size_t j = 0; j < p; ++j) dx[i * p + j] = g[i] / static_cast<T>(p);
    return dx;
  }

  static void im2col(const T* x, const LayerSpec& s, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow,
                     RowMat<T>& col) {
    const std::size_t k = s.fan_in(), p = oh * ow;
    col.setZero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
    std::size_t row = 0;
    for (std::size_t c = 0; c < s.in_channels; ++c)
      for (std::size_t ky = 0; ky < s.kernel_h; ++ky)
        for (std::size_t kx = 0; kx < s.kernel_w; ++kx, ++row)
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long y = static_cast<long>(oy * s.stride + ky) - static_cast<long>(s.padding);
            if (y < 0 || y >= static_cast<long>(h)) continue;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long xx = static_cast<long>(ox * s.stride + kx) - static_cast<long>(s.padding);
              if (xx < 0 || xx >= static_cast<long>(w)) continue;
              col(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(oy * ow + ox)) =
                  x[(c * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(xx)];
            }
          }
  }

  static void col2im(const RowMat<T>& col, const LayerSpec& s, std::size_t h, std::size_t w, std::size_t oh,
                     std::size_t ow, T* dx) {
    std::size_t row = 0;
    for (std::size_t c = 0; c < s.in_channels; ++c)
      for (std::size_t ky = 0; ky < s.kernel_h; ++ky)
        for (std::size_t kx = 0; kx < s.kernel_w; ++kx, ++row)
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long y = static_cast<long>(oy * s.stride + ky) - static_cast<long>(s.padding);
            if (y < 0 || y >= static_cast<long>(h)) continue;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long xx = static_cast<long>(ox * s.stride + kx) - static_cast<long>(s.padding);
              if (xx < 0 || xx >= static_cast<long>(w)) continue;
              dx[(c * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(xx)] +=
                  col(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(oy * ow + ox));
            }
          }
  }

  // Bias, BN and ReLU over z laid out as (n, channels, plane).
  static void affine_forward(Layer<T>& l, std::vector<T>& z, std::size_t n, std::size_t plane, bool train) {
    const std::size_t c = l.out_channels();
    if (l.has_bias())
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < c; ++o)
          for (std::size_t p = 0; p < plane; ++p) z[(i * c + o) * plane + p] += l.bias[o];
    l.batch_stats = train;
    if (l.has_bn()) {
      l.xhat.resize(z.size());
      l.inv_std.assign(c, T(0));
      const T eps = static_cast<T>(BatchNorm::kEpsilon);
      const double count = static_cast<double>(n * plane);
      for (std::size_t o = 0; o < c; ++o) {
        T mean, inv;
        if (train) {
          double s = 0.0, s2 = 0.0;
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < plane; ++p) s += static_cast<double>(z[(i * c + o) * plane + p]);
          const double mu = s / count;
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < plane; ++p) {
              const double d = static_cast<double>(z[(i * c + o) * plane + p]) - mu;
              s2 += d * d;
            }
          const double var = s2 / count;
          mean = static_cast<T>(mu);
          inv = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
          const double unbiased = count > 1 ? var * count / (count - 1) : var;
          l.run_mean[o] = static_cast<T>((1 - kBnMomentum) * static_cast<double>(l.run_mean[o]) + kBnMomentum * mu);
          l.run_var[o] = static_cast<T>((1 - kBnMomentum) * static_cast<double>(l.run_var[o]) + kBnMomentum * unbiased);
        } else {
          mean = l.run_mean[o];
          inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(l.run_var[o]) + static_cast<double>(eps)));
        }
        l.inv_std[o] = inv;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < plane; ++p) {
            T& v = z[(i * c + o) * plane + p];
            const T xh = (v - mean) * inv;
            l.xhat[(i * c + o) * plane + p] = xh;
            v = l.gamma[o] * xh + l.beta[o];
          }
      }
    }
    if (l.relu)
      for (T& v : z) v = std::max(v, T(0));
    l.out = z;
  }

  // Returns dL/dz (pre-bias) from dL/d(out); accumulates BN and bias grads.
  static std::vector<T> affine_backward(Layer<T>& l, std::vector<T> g, std::size_t n, std::size_t plane) {
    const std::size_t c = l.out_channels();
    if (l.relu)
      for (std::size_t i = 0; i < g.size(); ++i)
        if (l.out[i] <= T(0)) g[i] = T(0);
    if (l.has_bn()) {
      const double count = static_cast<double>(n * plane);
      for (std::size_t o = 0; o < c; ++o) {
        double sg = 0.0, sgx = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t idx = (i * c + o) * plane + p;
            sg += static_cast<double>(g[idx]);
            sgx += static_cast<double>(g[idx]) * static_cast<double>(l.xhat[idx]);
          }
        l.gbeta[o] += static_cast<T>(sg);
        l.ggamma[o] += static_cast<T>(sgx);
        const double gam = static_cast<double>(l.gamma[o]), inv = static_cast<double>(l.inv_std[o]);
        if (!l.batch_stats) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < plane; ++p) g[(i * c + o) * plane + p] *= static_cast<T>(gam * inv);
          continue;
        }
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t idx = (i * c + o) * plane + p;
            const double dxh = static_cast<double>(g[idx]) * gam;
            g[idx] = static_cast<T>(inv / count *
                                    (count * dxh - sg * gam - static_cast<double>(l.xhat[idx]) * sgx * gam));
          }
      }
    }
    if (l.has_bias())
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < c; ++o)
          for (std::size_t p = 0; p < plane; ++p) l.gbias[o] += g[(i * c + o) * plane + p];
    return g;
  }

  std::vector<T> conv_forward(Layer<T>& l, const std::vector<T>& x, std::size_t n, Shape& shape, bool train) {
    const LayerSpec& s = l.meta;
    require(shape.size() == 3 && shape[0] == s.in_channels, ErrorKind::kInvalidArgument,
            "layer " + s.name + ": input shape " + shape_string(shape) + " does not match");
    l.in_h = shape[1];
    l.in_w = shape[2];
    require(l.in_h + 2 * s.padding >= s.kernel_h && l.in_w + 2 * s.padding >= s.kernel_w, ErrorKind::kInvalidArgument,
            "layer " + s.name + ": kernel larger than padded input");
    l.out_h = (l.in_h + 2 * s.padding - s.kernel_h) / s.stride + 1;
    l.out_w = (l.in_w + 2 * s.padding - s.kernel_w) / s.stride + 1;
    const std::size_t in_size = s.in_channels * l.in_h * l.in_w, p = l.out_h * l.out_w, o = s.out_channels;
    const auto k = static_cast<Eigen::Index>(s.fan_in());
    ConstMatMap<T> wm(l.w.data(), static_cast<Eigen::Index>(o), k);
    l.cols.resize(n);
    std::vector<T> z(n * o * p);
    for (std::size_t i = 0; i < n; ++i) {
      im2col(x.data() + i * in_size, s, l.in_h, l.in_w, l.out_h, l.out_w, l.cols[i]);
      MatMap<T> zm(z.data() + i * o * p, static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(p));
      zm.noalias() = wm * l.cols[i];
    }
    affine_forward(l, z, n, p, train);
    shape = {o, l.out_h, l.out_w};
    return z;
  }

  std::vector<T> conv_backward(Layer<T>& l, const std::vector<T>& g_out, std::size_t n, bool need_input_grad) {
    const LayerSpec& s = l.meta;
    const std::size_t p = l.out_h * l.out_w, o = s.out_channels, in_size = s.in_channels * l.in_h * l.in_w;
    const auto k = static_cast<Eigen::Index>(s.fan_in());
    const std::vector<T> gz = affine_backward(l, g_out, n, p);
    MatMap<T> gw(l.gw.data(), static_cast<Eigen::Index>(o), k);
    ConstMatMap<T> wm(l.w.data(), static_cast<Eigen::Index>(o), k);
    std::vector<T> dx(need_input_grad ? n * in_size : 0, T(0));
    RowMat<T> dcol;
    for (std::size_t i = 0; i < n; ++i) {
      ConstMatMap<T> gzm(gz.data() + i * o * p, static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(p));
      gw.noalias() += gzm * l.cols[i].transpose();
      if (need_input_grad) {
        dcol.noalias() = wm.transpose() * gzm;
        col2im(dcol, s, l.in_h, l.in_w, l.out_h, l.out_w, dx.data() + i * in_size);
      }
    }
    return dx;
  }

  std::vector<T> dense_forward(Layer<T>& l, const std::vector<T>& x, std::size_t n, bool train) {
    const std::size_t in = l.meta.in_channels, o = l.meta.out_channels;
    require(x.size() == n * in, ErrorKind::kInvalidArgument, "layer " + l.meta.name + ": input size mismatch");
    l.input = x;
    // Plain loops: each row's sum order must not depend on the batch size.
    std::vector<T> z(n * o);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < o; ++j) {
        T acc(0);
        for (std::size_t k = 0; k < in; ++k) acc += x[i * in + k] * l.w[j * in + k];
        z[i * o + j] = acc;
      }
    affine_forward(l, z, n, 1, train);
    return z;
  }

  std::vector<T> dense_backward(Layer<T>& l, const std::vector<T>& g_out, std::size_t n) {
    const std::size_t in = l.meta.in_channels, o = l.meta.out_channels;
    const std::vector<T> gz = affine_backward(l, g_out, n, 1);
    ConstMatMap<T> gzm(gz.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(o));
    ConstMatMap<T> xm(l.input.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in));
    ConstMatMap<T> wm(l.w.data(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(in));
    MatMap<T> gw(l.gw.data(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(in));
    gw.noalias() += gzm.transpose() * xm;
    std::vector<T> dx(n * in);
    MatMap<T> dxm(dx.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in));
    dxm.noalias() = gzm * wm;
    return dx;
  }
};

// Mean softmax cross-entropy over n rows of logits; writes d(loss)/d(logits).
template <class T>
double softmax_cross_entropy(const std::vector<T>& logits, std::span<const int> labels, std::size_t classes,
                             std::vector<std::type_identity_t<T>>* grad, std::vector<double>* per_sample = nullptr) {
  const std::size_t n = labels.size();
  require(logits.size() == n * classes, ErrorKind::kInvalidArgument, "logit/label count mismatch");
  if (grad) grad->assign(logits.size(), T(0));
  if (per_sample) per_sample->assign(n, 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.data() + i * classes;
    const auto label = static_cast<std::size_t>(labels[i]);
    require(labels[i] >= 0 && label < classes, ErrorKind::kInvalidArgument, "label out of range");
    double mx = static_cast<double>(z[0]);
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, static_cast<double>(z[c]));
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(static_cast<double>(z[c]) - mx);
    const double lse = mx + std::log(sum);
    const double li = lse - static_cast<double>(z[label]);
    if (per_sample) (*per_sample)[i] = li;
    loss += li;
    if (grad)
      for (std::size_t c = 0; c < classes; ++c) {
        const double pr = std::exp(static_cast<double>(z[c]) - lse);
        (*grad)[i * classes + c] = static_cast<T>((pr - (c == label ? 1.0 : 0.0)) / static_cast<double>(n));
      }
  }
  return loss / static_cast<double>(n);
}

template <class T>
std::vector<T> batch_images(const Dataset& d, std::span<const std::size_t> idx) {
  const std::size_t per = d.image_size();
  std::vector<T> out(idx.size() * per);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(d.images.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * per), per, out.begin() + static_cast<std::ptrdiff_t>(i * per));
  return out;
}

inline Shape image_shape(const Dataset& d) { return Shape(d.images.shape().begin() + 1, d.images.shape().end()); }

// Top-1 accuracy in eval mode.
template <class T>
double evaluate_top1(Net<T>& net, const Dataset& d, std::size_t batch = 100) {
  require(d.size() > 0, ErrorKind::kInvalidArgument, "empty evaluation set");
  const Shape shape = image_shape(d);
  const std::size_t classes = net.num_classes();
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < d.size(); start += batch) {
    const std::size_t n = std::min(batch, d.size() - start);
    idx.resize(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = start + i;
    const auto x = batch_images<T>(d, idx);
    const auto logits = net.forward(x, n, shape, false);
    for (std::size_t i = 0; i < n; ++i) {
      const T* z = logits.data() + i * classes;
      const auto pred = static_cast<std::size_t>(std::max_element(z, z + classes) - z);
      correct += pred == static_cast<std::size_t>(d.labels[start + i]);
    }
  }
  return static_cast<double>(correct) / static_cast<double>(d.size());
}

// SGD with optional momentum and L2 weight decay on one parameter vector.
template <class T>
void sgd_step(std::vector<T>& p, const std::vector<T>& g, std::vector<T>& v, double lr, double momentum,
              double weight_decay = 0.0) {
  if (v.size() != p.size()) v.assign(p.size(), T(0));
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double gi = static_cast<double>(g[i]) + weight_decay * static_cast<double>(p[i]);
    const double vi = momentum * static_cast<double>(v[i]) + gi;
    v[i] = static_cast<T>(vi);
    p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * vi);
  }
}

// Fixed 9-conv classifier for 3x32x32 inputs: 3x3 convs with BN and ReLU,
// global average pooling, one dense layer with bias.
struct ToyConv {
  const char* name;
  std::uint32_t in, out, stride;
};
inline constexpr std::array<ToyConv, 9> kToyConvs{{{"conv1", 3, 8, 2},
                                                  {"conv2", 8, 8, 1},
                                                  {"conv3", 8, 16, 2},
                                                  {"conv4", 16, 16, 1},
                                                  {"conv5", 16, 16, 1},
                                                  {"conv6", 16, 32, 2},
                                                  {"conv7", 32, 32, 1},
                                                  {"conv8", 32, 32, 1},
                                                  {"conv9", 32, 32, 1}}};

inline Model make_toy_net(std::uint64_t seed, std::size_t classes = 10) {
  SplitMix64 g(seed);
  Model m;
  for (const auto& c : kToyConvs) {
    LayerSpec l = make_conv2d(c.name, c.in, c.out, 3, 1, c.stride);
    std::vector<float> w(element_count(l.expected_weight_shape()));
    const double sd = std::sqrt(2.0 / static_cast<double>(l.fan_in()));
    for (auto& v : w) v = static_cast<float>(g.normal(0.0, sd));
    l.weight = Tensor(l.expected_weight_shape(), std::move(w));
    l.bn = BatchNorm{std::vector<float>(c.out, 1.0f), std::vector<float>(c.out, 0.0f), std::vector<float>(c.out, 0.0f),
                     std::vector<float>(c.out, 1.0f)};
    m.layers.push_back(std::move(l));
  }
  LayerSpec fc = make_dense("fc", 32, static_cast<std::uint32_t>(classes));
  std::vector<float> w(32 * classes);
  for (auto& v : w) v = static_cast<float>(g.normal(0.0, std::sqrt(1.0 / 32.0)));
  fc.weight = Tensor({classes, 32}, std::move(w));
  fc.bias = std::vector<float>(classes, 0.0f);
  m.layers.push_back(std::move(fc));
  return m;
}

}  // namespace fq::nn

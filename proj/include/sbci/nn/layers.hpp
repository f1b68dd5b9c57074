#pragma once

// Forward and backward kernels for the layer types of the twin network:
// 3x3 convolution, batch normalization, ELU, ReLU, dense, inverted dropout.
// Every kernel is a function of (input, params); backward kernels
// accumulate parameter gradients into a ParamGrads and return the input
// gradient.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <string>

#include "sbci/nn/tensor.hpp"
#include "sbci/rng.hpp"

namespace sbci::nn {

enum class Mode { train, infer };

enum class LayerKind { conv2d, batchnorm, dense, elu, relu, flatten, dropout };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::dense: return "dense";
    case LayerKind::elu: return "elu";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dropout: return "dropout";
  }
  return "?";
}

template <typename T>
struct LayerParams {
  LayerKind kind = LayerKind::dense;
  Tensor<T> weights;  // conv: (out, in, kh, kw); dense: (units, inputs); batchnorm: gamma
  Tensor<T> bias;     // batchnorm: beta
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T epsilon = T(1e-5);
  T momentum = T(0.99);  // retention of the old running statistic
  // Train-mode batches folded into the running statistics so far. The
  // average is debiased by this count, so the initial 0 / 1 contribute
  // nothing once a batch has been seen.
  std::uint64_t stat_updates = 0;
  std::size_t padding = 0;
  T rate = T(0);  // dropout
};

template <typename T>
struct ParamGrads {
  Tensor<T> weights;
  Tensor<T> bias;
};

template <typename T>
ParamGrads<T> zero_grads_like(const LayerParams<T>& p) {
  ParamGrads<T> g;
  if (p.weights.size()) g.weights = Tensor<T>(p.weights.shape);
  if (p.bias.size()) g.bias = Tensor<T>(p.bias.shape);
  return g;
}

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  std::size_t n, c, h, w, out_c, kh, kw, pad, oh, ow;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t positions() const { return oh * ow; }
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& in, const LayerParams<T>& p) {
  require_rank(in, 4, "conv2d input");
  require_rank(p.weights, 4, "conv2d weights");
  ConvGeometry g{in.dim(0), in.dim(1), in.dim(2), in.dim(3), p.weights.dim(0),
                 p.weights.dim(2), p.weights.dim(3), p.padding, 0, 0};
  if (p.weights.dim(1) != g.c)
    throw ShapeError("conv2d: input has " + std::to_string(g.c) + " channels but kernel " +
                     shape_str(p.weights.shape) + " expects " + std::to_string(p.weights.dim(1)));
  if (p.bias.size() != g.out_c)
    throw ShapeError("conv2d: bias " + shape_str(p.bias.shape) + " does not match " +
                     std::to_string(g.out_c) + " output channels");
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw)
    throw ShapeError("conv2d: input " + shape_str(in.shape) + " smaller than kernel " +
                     shape_str(p.weights.shape));
  g.oh = g.h + 2 * g.pad - g.kh + 1;
  g.ow = g.w + 2 * g.pad - g.kw + 1;
  return g;
}

// Patch matrix of sample n: (patch, positions), row-major.
template <typename T>
void im2col(const Tensor<T>& in, std::size_t n, const ConvGeometry& g, RowMat<T>& col) {
  col.resize(static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(g.positions()));
  const auto ph = static_cast<std::ptrdiff_t>(g.h), pw = static_cast<std::ptrdiff_t>(g.w);
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.c; ++c) {
    const T* src = in.data.data() + (n * g.c + c) * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* dst = col.data() + ((c * g.kh + i) * g.kw + j) * g.positions();
        for (std::size_t y = 0; y < g.oh; ++y, dst += g.ow) {
          const auto sy = static_cast<std::ptrdiff_t>(y + i) - pad;
          if (sy < 0 || sy >= ph) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          const T* row = src + sy * pw;
          for (std::size_t x = 0; x < g.ow; ++x) {
            const auto sx = static_cast<std::ptrdiff_t>(x + j) - pad;
            dst[x] = (sx >= 0 && sx < pw) ? row[sx] : T(0);
          }
        }
      }
  }
}

template <typename T>
void col2im_add(const RowMat<T>& col, std::size_t n, const ConvGeometry& g, Tensor<T>& grad_in) {
  const auto ph = static_cast<std::ptrdiff_t>(g.h), pw = static_cast<std::ptrdiff_t>(g.w);
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.c; ++c) {
    T* dst = grad_in.data.data() + (n * g.c + c) * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* src = col.data() + ((c * g.kh + i) * g.kw + j) * g.positions();
        for (std::size_t y = 0; y < g.oh; ++y, src += g.ow) {
          const auto sy = static_cast<std::ptrdiff_t>(y + i) - pad;
          if (sy < 0 || sy >= ph) continue;
          T* row = dst + sy * pw;
          for (std::size_t x = 0; x < g.ow; ++x) {
            const auto sx = static_cast<std::ptrdiff_t>(x + j) - pad;
            if (sx >= 0 && sx < pw) row[sx] += src[x];
          }
        }
      }
  }
}

struct FeatureLayout {
  std::size_t n, features, inner;
};

template <typename T>
FeatureLayout feature_layout(const Tensor<T>& in) {
  if (in.rank() < 2) throw ShapeError("batchnorm: input needs a batch and a feature axis");
  std::size_t inner = 1;
  for (std::size_t i = 2; i < in.rank(); ++i) inner *= in.dim(i);
  return {in.dim(0), in.dim(1), inner};
}

}  // namespace detail

// ---------------------------------------------------------------- conv2d

template <typename T>
Tensor<T> conv2d(const Tensor<T>& in, const LayerParams<T>& p) {
  const auto g = detail::conv_geometry(in, p);
  const std::size_t pos = g.positions();
  Tensor<T> out({g.n, g.out_c, g.oh, g.ow});
  detail::CMapMat<T> w(p.weights.data.data(), g.out_c, g.patch());
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(p.bias.data.data(), g.out_c);
  detail::RowMat<T> col;
  for (std::size_t n = 0; n < g.n; ++n) {
    detail::im2col(in, n, g, col);
    detail::MapMat<T> y(out.data.data() + n * g.out_c * pos, g.out_c, pos);
    y.noalias() = w * col;
    y.colwise() += b;
  }
  return out;
}

template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& in, const LayerParams<T>& p, const Tensor<T>& grad_out,
                          ParamGrads<T>& grads) {
  const auto g = detail::conv_geometry(in, p);
  const std::size_t pos = g.positions();
  if (grad_out.shape != Shape{g.n, g.out_c, g.oh, g.ow})
    throw ShapeError("conv2d backward: gradient shape " + shape_str(grad_out.shape));
  detail::CMapMat<T> w(p.weights.data.data(), g.out_c, g.patch());
  detail::MapMat<T> dw(grads.weights.data.data(), g.out_c, g.patch());
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(grads.bias.data.data(), g.out_c);
  Tensor<T> grad_in(in.shape);
  detail::RowMat<T> col, dcol;
  for (std::size_t n = 0; n < g.n; ++n) {
    detail::CMapMat<T> dy(grad_out.data.data() + n * g.out_c * pos, g.out_c, pos);
    detail::im2col(in, n, g, col);
    dw.noalias() += dy * col.transpose();
    db += dy.rowwise().sum();
    dcol.noalias() = w.transpose() * dy;
    detail::col2im_add(dcol, n, g, grad_in);
  }
  return grad_in;
}

// ------------------------------------------------------------- batchnorm

template <typename T>
struct BatchNormCache {
  Tensor<T> normalized;      // x-hat
  std::vector<T> inv_std;    // per feature
  bool used_batch_stats = false;
};

/// Normalizes per feature (per channel for 4-D inputs). In train mode uses
/// batch statistics and folds them into the running statistics; in infer
/// mode uses the running statistics only.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& in, LayerParams<T>& p, Mode mode,
                    BatchNormCache<T>* cache = nullptr) {
  using Seg = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;
  using MutSeg = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
  const auto L = detail::feature_layout(in);
  if (p.weights.size() != L.features || p.bias.size() != L.features)
    throw ShapeError("batchnorm: parameters sized " + std::to_string(p.weights.size()) +
                     " for input " + shape_str(in.shape));
  const bool batch_stats = mode == Mode::train;
  if (batch_stats && L.n < 2)
    throw ShapeError("batchnorm: train mode needs a batch of at least 2, got 1");
  auto seg = [&](const Tensor<T>& t, std::size_t n, std::size_t f) {
    return Seg(t.data.data() + (n * L.features + f) * L.inner, static_cast<Eigen::Index>(L.inner));
  };
  auto mut = [&](Tensor<T>& t, std::size_t n, std::size_t f) {
    return MutSeg(t.data.data() + (n * L.features + f) * L.inner, static_cast<Eigen::Index>(L.inner));
  };

  std::vector<double> mean(L.features), var(L.features);
  if (batch_stats) {
    const double m = static_cast<double>(L.n * L.inner);
    for (std::size_t n = 0; n < L.n; ++n)
      for (std::size_t f = 0; f < L.features; ++f) mean[f] += static_cast<double>(seg(in, n, f).sum());
    for (auto& v : mean) v /= m;
    for (std::size_t n = 0; n < L.n; ++n)
      for (std::size_t f = 0; f < L.features; ++f)
        var[f] += static_cast<double>((seg(in, n, f) - static_cast<T>(mean[f])).square().sum());
    ++p.stat_updates;
    const double keep = static_cast<double>(p.momentum);
    const double alpha = (1.0 - keep) / (1.0 - std::pow(keep, static_cast<double>(p.stat_updates)));
    for (std::size_t f = 0; f < L.features; ++f) {
      const double unbiased = var[f] / (m - 1.0);
      var[f] /= m;
      const double rm = p.running_mean[f], rv = p.running_var[f];
      p.running_mean[f] = static_cast<T>(rm + alpha * (mean[f] - rm));
      p.running_var[f] = static_cast<T>(rv + alpha * (unbiased - rv));
    }
  } else {
    for (std::size_t f = 0; f < L.features; ++f) {
      mean[f] = p.running_mean[f];
      var[f] = p.running_var[f];
    }
  }

  std::vector<T> inv_std(L.features);
  for (std::size_t f = 0; f < L.features; ++f)
    inv_std[f] = static_cast<T>(1.0 / std::sqrt(var[f] + static_cast<double>(p.epsilon)));
  Tensor<T> out(in.shape);
  Tensor<T> xhat(in.shape);
  for (std::size_t n = 0; n < L.n; ++n)
    for (std::size_t f = 0; f < L.features; ++f) {
      auto h = mut(xhat, n, f);
      h = (seg(in, n, f) - static_cast<T>(mean[f])) * inv_std[f];
      mut(out, n, f) = p.weights[f] * h + p.bias[f];
    }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->used_batch_stats = batch_stats;
  }
  return out;
}

template <typename T>
Tensor<T> batchnorm_backward(const BatchNormCache<T>& cache, const LayerParams<T>& p,
                             const Tensor<T>& grad_out, ParamGrads<T>& grads) {
  using Seg = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;
  using MutSeg = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
  const auto L = detail::feature_layout(grad_out);
  auto seg = [&](const Tensor<T>& t, std::size_t n, std::size_t f) {
    return Seg(t.data.data() + (n * L.features + f) * L.inner, static_cast<Eigen::Index>(L.inner));
  };
  std::vector<double> sum_dy(L.features), sum_dy_xhat(L.features);
  for (std::size_t n = 0; n < L.n; ++n)
    for (std::size_t f = 0; f < L.features; ++f) {
      const auto dy = seg(grad_out, n, f);
      sum_dy[f] += static_cast<double>(dy.sum());
      sum_dy_xhat[f] += static_cast<double>((dy * seg(cache.normalized, n, f)).sum());
    }
  const double m = static_cast<double>(L.n * L.inner);
  Tensor<T> grad_in(grad_out.shape);
  for (std::size_t f = 0; f < L.features; ++f) {
    grads.weights[f] += static_cast<T>(sum_dy_xhat[f]);
    grads.bias[f] += static_cast<T>(sum_dy[f]);
  }
  for (std::size_t n = 0; n < L.n; ++n)
    for (std::size_t f = 0; f < L.features; ++f) {
      MutSeg dx(grad_in.data.data() + (n * L.features + f) * L.inner, static_cast<Eigen::Index>(L.inner));
      const T scale = static_cast<T>(static_cast<double>(p.weights[f]) * cache.inv_std[f]);
      if (cache.used_batch_stats) {
        const T mean_dy = static_cast<T>(sum_dy[f] / m);
        const T mean_dy_xhat = static_cast<T>(sum_dy_xhat[f] / m);
        dx = scale * (seg(grad_out, n, f) - mean_dy - seg(cache.normalized, n, f) * mean_dy_xhat);
      } else {
        dx = scale * seg(grad_out, n, f);
      }
    }
  return grad_in;
}

// ----------------------------------------------------------- activations

namespace detail {
template <typename T>
auto array_of(const Tensor<T>& t) {
  return Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>(t.data.data(), static_cast<Eigen::Index>(t.size()));
}
template <typename T>
auto array_of(Tensor<T>& t) {
  return Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>(t.data.data(), static_cast<Eigen::Index>(t.size()));
}
}  // namespace detail

/// alpha = 1.
template <typename T>
Tensor<T> elu(const Tensor<T>& in) {
  Tensor<T> out(in.shape);
  const auto x = detail::array_of(in);
  detail::array_of(out) = (x > T(0)).select(x, x.min(T(0)).exp() - T(1));
  return out;
}

template <typename T>
Tensor<T> elu_backward(const Tensor<T>& in, const Tensor<T>& grad_out) {
  Tensor<T> g(grad_out.shape);
  const auto x = detail::array_of(in);
  const auto dy = detail::array_of(grad_out);
  detail::array_of(g) = (x < T(0)).select(dy * x.min(T(0)).exp(), dy);
  return g;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& in) {
  Tensor<T> out = in;
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  return out;
}

/// d relu / dx is taken as 1 at x == 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& in, const Tensor<T>& grad_out) {
  Tensor<T> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (in[i] < T(0)) g[i] = T(0);
  return g;
}

// ----------------------------------------------------------------- dense

template <typename T>
Tensor<T> dense(const Tensor<T>& in, const LayerParams<T>& p) {
  require_rank(in, 2, "dense input");
  require_rank(p.weights, 2, "dense weights");
  const std::size_t n = in.dim(0), d = in.dim(1), u = p.weights.dim(0);
  if (p.weights.dim(1) != d)
    throw ShapeError("dense: input " + shape_str(in.shape) + " does not match weights " +
                     shape_str(p.weights.shape));
  if (p.bias.size() != u) throw ShapeError("dense: bias " + shape_str(p.bias.shape));
  Tensor<T> out({n, u});
  detail::CMapMat<T> x(in.data.data(), n, d);
  detail::CMapMat<T> w(p.weights.data.data(), u, d);
  detail::MapMat<T> y(out.data.data(), n, u);
  y.noalias() = x * w.transpose();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < u; ++j) y(i, j) += p.bias[j];
  return out;
}

template <typename T>
Tensor<T> dense_backward(const Tensor<T>& in, const LayerParams<T>& p, const Tensor<T>& grad_out,
                         ParamGrads<T>& grads) {
  const std::size_t n = in.dim(0), d = in.dim(1), u = p.weights.dim(0);
  if (grad_out.shape != Shape{n, u})
    throw ShapeError("dense backward: gradient shape " + shape_str(grad_out.shape));
  detail::CMapMat<T> x(in.data.data(), n, d);
  detail::CMapMat<T> w(p.weights.data.data(), u, d);
  detail::CMapMat<T> dy(grad_out.data.data(), n, u);
  detail::MapMat<T> dw(grads.weights.data.data(), u, d);
  dw.noalias() += dy.transpose() * x;
  for (std::size_t j = 0; j < u; ++j) grads.bias[j] += dy.col(j).sum();
  Tensor<T> grad_in({n, d});
  detail::MapMat<T> dx(grad_in.data.data(), n, d);
  dx.noalias() = dy * w;
  return grad_in;
}

// --------------------------------------------------------------- dropout

inline void check_dropout_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
}

template <typename T>
Tensor<T> apply_mask(const Tensor<T>& in, const Tensor<T>& mask) {
  if (in.shape != mask.shape)
    throw ShapeError("dropout mask " + shape_str(mask.shape) + " vs input " + shape_str(in.shape));
  Tensor<T> out = in;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return out;
}

/// Inverted dropout. The applied scale factors are written to `mask` so the
/// backward pass can reuse them.
template <typename T>
Tensor<T> dropout(const Tensor<T>& in, double rate, Mode mode, Rng& rng, Tensor<T>* mask = nullptr) {
  check_dropout_rate(rate);
  if (mode == Mode::infer || rate == 0.0) {
    if (mask) *mask = Tensor<T>(in.shape, T(1));
    return in;
  }
  Tensor<T> m(in.shape);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& v : m.data) v = uniform01(rng) < rate ? T(0) : keep_scale;
  Tensor<T> out = apply_mask(in, m);
  if (mask) *mask = std::move(m);
  return out;
}

}  // namespace sbci::nn

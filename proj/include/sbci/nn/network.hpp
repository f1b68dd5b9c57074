#pragma once

#include <string>
#include <vector>

#include "sbci/nn/layers.hpp"

namespace sbci::nn {

/// One stage of a sequential network: parameters, accumulated gradients and
/// whatever the backward pass needs from the last forward call.
template <typename T>
struct Layer {
  LayerParams<T> params;
  ParamGrads<T> grads;

  Tensor<T> input;  // cached forward input
  BatchNormCache<T> bn_cache;
  Tensor<T> mask;
  bool frozen_mask = false;   // dropout: reuse the stored mask
  bool frozen_stats = false;  // batchnorm: running statistics even in train mode

  bool trainable() const {
    return params.kind == LayerKind::conv2d || params.kind == LayerKind::dense ||
           params.kind == LayerKind::batchnorm;
  }
};

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

template <typename T>
Layer<T> make_conv2d(std::size_t in_c, std::size_t out_c, std::size_t kernel, std::size_t padding,
                     Rng& rng) {
  Layer<T> l;
  l.params.kind = LayerKind::conv2d;
  l.params.padding = padding;
  l.params.weights = Tensor<T>({out_c, in_c, kernel, kernel});
  l.params.bias = Tensor<T>({out_c});
  const double scale = std::sqrt(2.0 / static_cast<double>(in_c * kernel * kernel));
  for (auto& w : l.params.weights.data) w = static_cast<T>(scale * standard_normal(rng));
  l.grads = zero_grads_like(l.params);
  return l;
}

template <typename T>
Layer<T> make_dense(std::size_t inputs, std::size_t units, Rng& rng) {
  Layer<T> l;
  l.params.kind = LayerKind::dense;
  l.params.weights = Tensor<T>({units, inputs});
  l.params.bias = Tensor<T>({units});
  const double scale = std::sqrt(2.0 / static_cast<double>(inputs));
  for (auto& w : l.params.weights.data) w = static_cast<T>(scale * standard_normal(rng));
  l.grads = zero_grads_like(l.params);
  return l;
}

template <typename T>
Layer<T> make_batchnorm(std::size_t features, T epsilon = T(1e-5), T momentum = T(0.99)) {
  Layer<T> l;
  l.params.kind = LayerKind::batchnorm;
  l.params.weights = Tensor<T>({features}, T(1));
  l.params.bias = Tensor<T>({features}, T(0));
  l.params.running_mean = Tensor<T>({features}, T(0));
  l.params.running_var = Tensor<T>({features}, T(1));
  l.params.epsilon = epsilon;
  l.params.momentum = momentum;
  l.grads = zero_grads_like(l.params);
  return l;
}

template <typename T>
Layer<T> make_activation(LayerKind kind) {
  Layer<T> l;
  l.params.kind = kind;
  return l;
}

template <typename T>
Layer<T> make_dropout(double rate) {
  check_dropout_rate(rate);
  Layer<T> l;
  l.params.kind = LayerKind::dropout;
  l.params.rate = static_cast<T>(rate);
  return l;
}

/// Sequential stack of layers.
template <typename T>
class Network {
 public:
  std::vector<Layer<T>> layers;

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng& rng) {
    Tensor<T> h = x;
    for (auto& l : layers) h = forward_layer(l, std::move(h), mode, rng);
    if (!h.all_finite()) throw NumericError("network forward produced a non-finite value");
    return h;
  }

  /// Inference-mode forward pass that touches no cached state, so it may
  /// run concurrently on a shared network.
  Tensor<T> infer(const Tensor<T>& x) const {
    Tensor<T> h = x;
    for (const auto& l : layers) {
      switch (l.params.kind) {
        case LayerKind::conv2d: h = conv2d(h, l.params); break;
        case LayerKind::batchnorm: {
          LayerParams<T> p = l.params;
          h = batchnorm(h, p, Mode::infer);
          break;
        }
        case LayerKind::elu: h = elu(h); break;
        case LayerKind::relu: h = relu(h); break;
        case LayerKind::flatten: {
          const std::size_t n = h.dim(0);
          h = h.reshaped({n, h.size() / n});
          break;
        }
        case LayerKind::dense: h = dense(h, l.params); break;
        case LayerKind::dropout: break;
      }
    }
    if (!h.all_finite()) throw NumericError("network inference produced a non-finite value");
    return h;
  }

  /// Back-propagates `grad` (d loss / d output of the last forward call),
  /// accumulating parameter gradients; returns d loss / d input.
  Tensor<T> backward(const Tensor<T>& grad) {
    Tensor<T> g = grad;
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) g = backward_layer(*it, g);
    return g;
  }

  void zero_grad() {
    for (auto& l : layers) {
      l.grads.weights.fill(T(0));
      l.grads.bias.fill(T(0));
    }
  }

  std::vector<ParamRef<T>> parameters() {
    std::vector<ParamRef<T>> out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto& l = layers[i];
      if (!l.trainable()) continue;
      const std::string base = std::to_string(i) + "." + to_string(l.params.kind);
      out.push_back({base + ".weights", &l.params.weights, &l.grads.weights});
      out.push_back({base + ".bias", &l.params.bias, &l.grads.bias});
    }
    return out;
  }

  void freeze_dropout(bool on) {
    for (auto& l : layers)
      if (l.params.kind == LayerKind::dropout) l.frozen_mask = on;
  }

  void freeze_batchnorm(bool on) {
    for (auto& l : layers)
      if (l.params.kind == LayerKind::batchnorm) l.frozen_stats = on;
  }

  /// Drops the cached activations (they can be large after a training batch).
  void clear_cache() {
    for (auto& l : layers) {
      l.input = {};
      l.bn_cache = {};
      if (!l.frozen_mask) l.mask = {};
    }
  }

  template <typename U>
  Network<U> cast() const {
    Network<U> out;
    for (const auto& l : layers) {
      Layer<U> c;
      c.params.kind = l.params.kind;
      c.params.weights = l.params.weights.template cast<U>();
      c.params.bias = l.params.bias.template cast<U>();
      c.params.running_mean = l.params.running_mean.template cast<U>();
      c.params.running_var = l.params.running_var.template cast<U>();
      c.params.epsilon = static_cast<U>(l.params.epsilon);
      c.params.momentum = static_cast<U>(l.params.momentum);
      c.params.stat_updates = l.params.stat_updates;
      c.params.padding = l.params.padding;
      c.params.rate = static_cast<U>(l.params.rate);
      c.grads = zero_grads_like(c.params);
      out.layers.push_back(std::move(c));
    }
    return out;
  }

 private:
  static Tensor<T> forward_layer(Layer<T>& l, Tensor<T> h, Mode mode, Rng& rng) {
    switch (l.params.kind) {
      case LayerKind::conv2d: {
        auto out = conv2d(h, l.params);
        l.input = std::move(h);
        return out;
      }
      case LayerKind::batchnorm: {
        const Mode bn_mode = l.frozen_stats ? Mode::infer : mode;
        return batchnorm(h, l.params, bn_mode, &l.bn_cache);
      }
      case LayerKind::elu: {
        auto out = elu(h);
        l.input = std::move(h);
        return out;
      }
      case LayerKind::relu: {
        auto out = relu(h);
        l.input = std::move(h);
        return out;
      }
      case LayerKind::flatten: {
        l.input = Tensor<T>();
        l.input.shape = h.shape;
        const std::size_t n = h.dim(0);
        return h.reshaped({n, h.size() / n});
      }
      case LayerKind::dense: {
        auto out = dense(h, l.params);
        l.input = std::move(h);
        return out;
      }
      case LayerKind::dropout: {
        if (mode == Mode::train && l.frozen_mask && l.mask.shape == h.shape)
          return apply_mask(h, l.mask);
        return dropout(h, static_cast<double>(l.params.rate), mode, rng, &l.mask);
      }
    }
    return h;
  }

  static Tensor<T> backward_layer(Layer<T>& l, const Tensor<T>& g) {
    switch (l.params.kind) {
      case LayerKind::conv2d: return conv2d_backward(l.input, l.params, g, l.grads);
      case LayerKind::batchnorm: return batchnorm_backward(l.bn_cache, l.params, g, l.grads);
      case LayerKind::elu: return elu_backward(l.input, g);
      case LayerKind::relu: return relu_backward(l.input, g);
      case LayerKind::flatten: return g.reshaped(l.input.shape);
      case LayerKind::dense: return dense_backward(l.input, l.params, g, l.grads);
      case LayerKind::dropout: return apply_mask(g, l.mask);
    }
    return g;
  }
};

}  // namespace sbci::nn

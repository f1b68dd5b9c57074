#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "sbci/nn/network.hpp"

namespace sbci::nn {

template <typename T>
struct AdamState {
  Tensor<T> m;
  Tensor<T> v;
  std::uint64_t t = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
AdamState<T> make_adam_state(const Tensor<T>& param, double lr = 1e-4) {
  AdamState<T> s;
  s.m = Tensor<T>(param.shape);
  s.v = Tensor<T>(param.shape);
  s.lr = lr;
  return s;
}

/// One bias-corrected Adam update of `params` in place.
template <typename T>
void adam_step(Tensor<T>& params, const Tensor<T>& grads, AdamState<T>& s) {
  if (params.shape != grads.shape || params.shape != s.m.shape || params.shape != s.v.shape)
    throw ShapeError("adam_step: parameter " + shape_str(params.shape) + ", gradient " +
                     shape_str(grads.shape) + " and moment shapes disagree");
  ++s.t;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  const T b1 = static_cast<T>(s.beta1), b2 = static_cast<T>(s.beta2);
  const T step = static_cast<T>(s.lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(s.eps);
  using Arr = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
  const auto n = static_cast<Eigen::Index>(params.size());
  Arr w(params.data.data(), n), m(s.m.data.data(), n), v(s.v.data.data(), n);
  Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> g(grads.data.data(), n);
  m = b1 * m + (T(1) - b1) * g;
  v = b2 * v + (T(1) - b2) * g.square();
  w -= step * m / ((v * inv_c2).sqrt() + eps);
}

/// Adam over every trainable tensor of a network.
template <typename T>
class Adam {
 public:
  Adam(Network<T>& net, double lr) : lr_(lr) {
    for (auto& p : net.parameters()) states_.push_back(make_adam_state(*p.value, lr));
  }

  void step(Network<T>& net) {
    auto params = net.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) adam_step(*params[i].value, *params[i].grad, states_[i]);
  }

  double lr() const { return lr_; }

 private:
  double lr_;
  std::vector<AdamState<T>> states_;
};

}  // namespace sbci::nn

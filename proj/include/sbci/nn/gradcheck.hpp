#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <utility>

#include "sbci/nn/network.hpp"

namespace sbci::nn {

/// Loss head: maps a network output to (loss, d loss / d output).
using LossHead = std::function<std::pair<double, Tensor<double>>(const Tensor<double>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // parameter name and flat index of the worst entry
};

inline double relative_error(double fd, double an, double floor = 1e-8) {
  return std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), floor});
}

/// Denominator floor for a loss of magnitude `loss`: central differences
/// carry roughly eps*|loss|/step of roundoff, and entries whose true
/// gradient sits below 1e4 times that are compared on that absolute scale.
inline double roundoff_floor(double loss, double step) {
  return std::max(1e-8, 1e4 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(loss)) / step);
}

/// Central differences against analytic gradients already stored in each
/// ParamRef::grad. `loss` re-evaluates the scalar loss from the current
/// parameter values.
template <typename LossFn>
GradCheckResult gradient_check(const std::vector<ParamRef<double>>& params, LossFn&& loss,
                               double step = 1e-5, double floor = 1e-8) {
  GradCheckResult r;
  for (const auto& p : params) {
    for (std::size_t i = 0; i < p.value->size(); ++i) {
      double& w = (*p.value)[i];
      const double saved = w;
      w = saved + step;
      const double up = loss();
      w = saved - step;
      const double down = loss();
      w = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("gradient_check: non-finite loss at " + p.name);
      const double fd = (up - down) / (2.0 * step);
      const double err = relative_error(fd, (*p.grad)[i], floor);
      if (err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

/// Checks every parameter of `net` plus the input itself. Dropout masks are
/// frozen after the first forward pass; the batchnorm mode is whatever the
/// caller configured via `mode` and `freeze_batchnorm`.
inline GradCheckResult gradient_check(Network<double>& net, const Tensor<double>& input,
                                      const LossHead& head, Mode mode = Mode::train,
                                      double step = 1e-5) {
  Rng rng(0x5eed);
  net.freeze_dropout(true);
  net.zero_grad();
  auto out = net.forward(input, mode, rng);
  auto [loss0, dout] = head(out);
  if (!std::isfinite(loss0)) throw NumericError("gradient_check: non-finite loss");
  Tensor<double> dinput = net.backward(dout);

  Tensor<double> x = input;
  auto eval = [&] { return head(net.forward(x, mode, rng)).first; };

  std::vector<ParamRef<double>> refs = net.parameters();
  refs.push_back({"input", &x, &dinput});
  auto r = gradient_check(refs, eval, step, roundoff_floor(loss0, step));
  net.freeze_dropout(false);
  return r;
}

}  // namespace sbci::nn

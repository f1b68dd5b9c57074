#pragma once

#include <cmath>

#include "sbci/types.hpp"

namespace sbci::dsp {

/// Z = X X^T / tr(X X^T). With `center`, each channel is mean-removed
/// first (the centered covariance variant).
inline CovarianceFeature covariance_feature(const EegTrial& trial, bool center = false) {
  if (trial.data.size() == 0) throw DegenerateInputError("covariance of an empty trial");
  if (!trial.data.allFinite()) throw DegenerateInputError("trial contains non-finite samples");
  Matrix x = trial.data;
  if (center) x.colwise() -= x.rowwise().mean();
  const auto n = x.rows();
  Matrix gram = Matrix::Zero(n, n);
  gram.selfadjointView<Eigen::Lower>().rankUpdate(x);
  gram = gram.selfadjointView<Eigen::Lower>();
  const double tr = gram.trace();
  if (!(tr > 0) || !std::isfinite(tr))
    throw DegenerateInputError("trial has zero energy; trace of X X^T is " + std::to_string(tr));
  return {gram / tr, trial.label};
}

}  // namespace sbci::dsp

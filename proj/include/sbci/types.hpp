#pragma once

#include <Eigen/Core>
#include <string>

#include "sbci/error.hpp"

namespace sbci {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Class labels are 1..K; 0 marks an unlabeled trial.
using Label = int;
inline constexpr Label kUnlabeled = 0;

/// One multichannel epoch, channels x samples.
struct EegTrial {
  Matrix data;
  Label label = kUnlabeled;
  double fs = 250.0;

  std::size_t channels() const { return static_cast<std::size_t>(data.rows()); }
  std::size_t samples() const { return static_cast<std::size_t>(data.cols()); }
};

/// Trace-normalized spatial covariance of a trial; the network input.
struct CovarianceFeature {
  Matrix matrix;
  Label label = kUnlabeled;
};

}  // namespace sbci

#pragma once

#include <json.hpp>
#include <span>
#include <vector>

#include "sbci/dsp/butterworth.hpp"
#include "sbci/dsp/covariance.hpp"
#include "sbci/dsp/epoch.hpp"

namespace sbci {

struct PreprocessConfig {
  int filter_order = 5;
  double f_lo = 7.0;
  double f_hi = 30.0;
  bool zero_phase = false;
  double t_start = 0.5;  // seconds after the cue
  double t_end = 2.5;
  bool center = false;   // mean-remove channels before the Gram matrix

  std::vector<std::string> violations(double fs) const {
    std::vector<std::string> v;
    if (filter_order < 1) v.push_back("preprocess.filter_order must be >= 1");
    if (!(f_lo > 0 && f_lo < f_hi && f_hi < fs / 2))
      v.push_back("preprocess band must satisfy 0 < f_lo < f_hi < fs/2");
    if (!(t_start >= 0 && t_end > t_start)) v.push_back("preprocess epoch window must satisfy 0 <= t_start < t_end");
    return v;
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PreprocessConfig, filter_order, f_lo, f_hi, zero_phase,
                                                t_start, t_end, center)

/// Cue-locked raw trials (cue at sample 0) to covariance features: the whole
/// trial is band-passed first, then the [t_start, t_end) window is cut out,
/// so filter start-up transients fall before the window.
inline std::vector<CovarianceFeature> preprocess(std::span<const EegTrial> trials, const PreprocessConfig& cfg) {
  std::vector<CovarianceFeature> out;
  out.reserve(trials.size());
  if (trials.empty()) return out;
  const double fs = trials.front().fs;
  const auto filter = dsp::design_bandpass(cfg.filter_order, cfg.f_lo, cfg.f_hi, fs);
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const auto& t = trials[i];
    if (t.fs != fs) throw ConfigError("trials have mixed sampling rates");
    const Matrix filtered = dsp::filter_apply(filter, t.data, cfg.zero_phase);
    const std::size_t onset[] = {0};
    const Label label[] = {t.label};
    auto ep = dsp::epoch_extract(filtered, onset, cfg.t_start, cfg.t_end, fs, label);
    if (!ep.errors.empty()) throw ShapeError("trial " + std::to_string(i) + ": " + ep.errors.front().message);
    out.push_back(dsp::covariance_feature(ep.epochs.front(), cfg.center));
  }
  return out;
}

}  // namespace sbci

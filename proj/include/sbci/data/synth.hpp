#pragma once

// Synthetic class-separable EEG. Each class owns a frequency band and a
// group of channels; a trial of class k carries an amplitude-modulated
// sinusoid near the class center frequency, projected with fixed gains
// onto the class's channel group, plus white Gaussian noise on every
// channel. Trials are cue-locked (cue at sample 0).

#include <cmath>
#include <json.hpp>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "sbci/rng.hpp"
#include "sbci/types.hpp"

namespace sbci::data {

struct ClassBand {
  double center_hz = 10.0;
  double bandwidth_hz = 2.0;  // per-trial frequency jitter range
  std::vector<std::size_t> channels;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ClassBand, center_hz, bandwidth_hz, channels)

struct SynthConfig {
  int classes = 4;
  std::size_t trials_per_class = 60;
  std::size_t channels = 22;
  std::size_t samples = 750;
  double fs = 250.0;
  std::vector<ClassBand> bands;
  /// Oscillation power over noise power on active channels. Infinity
  /// disables the noise.
  double snr = 2.0;
  std::uint64_t seed = 7;

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (classes < 2) v.push_back("synth.classes must be >= 2");
    if (trials_per_class < 1) v.push_back("synth.trials_per_class must be >= 1");
    if (channels < 1 || samples < 1) v.push_back("synth.channels and synth.samples must be >= 1");
    if (!(fs > 0)) v.push_back("synth.fs must be positive");
    if (!(snr > 0)) v.push_back("synth.snr must be positive");
    if (bands.size() != static_cast<std::size_t>(std::max(classes, 0)))
      v.push_back("synth.bands has " + std::to_string(bands.size()) + " entries for " +
                  std::to_string(classes) + " classes");
    for (std::size_t i = 0; i < bands.size(); ++i) {
      const auto& b = bands[i];
      const std::string tag = "synth.bands[" + std::to_string(i) + "]";
      if (!(b.center_hz - b.bandwidth_hz / 2 > 0) || !(b.center_hz + b.bandwidth_hz / 2 < fs / 2))
        v.push_back(tag + " band must lie within (0, fs/2)");
      if (b.bandwidth_hz < 0) v.push_back(tag + ".bandwidth_hz must be >= 0");
      if (b.channels.empty()) v.push_back(tag + ".channels is empty");
      for (auto c : b.channels)
        if (c >= channels) v.push_back(tag + " references channel " + std::to_string(c));
    }
    return v;
  }
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{{"classes", c.classes}, {"trials_per_class", c.trials_per_class},
                     {"channels", c.channels}, {"samples", c.samples}, {"fs", c.fs},
                     {"bands", c.bands}, {"seed", c.seed}};
  if (std::isfinite(c.snr)) j["snr"] = c.snr;
  else j["snr"] = nullptr;
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
  c.classes = j.value("classes", c.classes);
  c.trials_per_class = j.value("trials_per_class", c.trials_per_class);
  c.channels = j.value("channels", c.channels);
  c.samples = j.value("samples", c.samples);
  c.fs = j.value("fs", c.fs);
  if (j.contains("bands")) c.bands = j.at("bands").get<std::vector<ClassBand>>();
  if (j.contains("snr"))
    c.snr = j.at("snr").is_null() ? std::numeric_limits<double>::infinity() : j.at("snr").get<double>();
  c.seed = j.value("seed", c.seed);
}

/// Four motor-imagery-like classes: 9, 12, 20 and 26 Hz on disjoint groups
/// of five channels (channels 20 and 21 carry noise only).
inline SynthConfig default_synth_config() {
  SynthConfig c;
  const double centers[] = {9.0, 12.0, 20.0, 26.0};
  for (std::size_t k = 0; k < 4; ++k) {
    ClassBand b;
    b.center_hz = centers[k];
    b.bandwidth_hz = 2.0;
    for (std::size_t ch = 5 * k; ch < 5 * k + 5; ++ch) b.channels.push_back(ch);
    c.bands.push_back(std::move(b));
  }
  return c;
}

/// Labeled trials ordered class by class; a pure function of the config.
inline std::vector<EegTrial> synth_dataset(const SynthConfig& cfg) {
  if (const auto v = cfg.violations(); !v.empty()) {
    std::string msg;
    for (const auto& s : v) msg += (msg.empty() ? "" : "; ") + s;
    throw ConfigError(msg);
  }
  const double two_pi = 2.0 * std::numbers::pi;

  // Fixed spatial gains per class, drawn from the config seed.
  Rng gain_rng(mix_seed(cfg.seed, 0x6a1));
  std::vector<std::vector<double>> gains(cfg.bands.size());
  for (std::size_t k = 0; k < cfg.bands.size(); ++k)
    for (std::size_t i = 0; i < cfg.bands[k].channels.size(); ++i)
      gains[k].push_back(0.5 + 0.5 * uniform01(gain_rng));

  std::vector<EegTrial> out;
  out.reserve(cfg.trials_per_class * cfg.bands.size());
  std::uint64_t index = 0;
  for (std::size_t k = 0; k < cfg.bands.size(); ++k) {
    const auto& band = cfg.bands[k];
    double mean_gain_sq = 0;
    for (double g : gains[k]) mean_gain_sq += g * g;
    mean_gain_sq /= static_cast<double>(gains[k].size());
    // Source power: E[A^2] / 2 with A = 1 + 0.5 sin(.), E[A^2] = 1.125.
    const double signal_power = mean_gain_sq * 1.125 * 0.5;
    const double noise_sd = std::isfinite(cfg.snr) ? std::sqrt(signal_power / cfg.snr) : 0.0;

    for (std::size_t t = 0; t < cfg.trials_per_class; ++t, ++index) {
      Rng rng(mix_seed(cfg.seed, index));
      const double f = band.center_hz + band.bandwidth_hz * (uniform01(rng) - 0.5);
      const double phase = two_pi * uniform01(rng);
      const double f_mod = 0.5 + uniform01(rng);
      const double phase_mod = two_pi * uniform01(rng);

      EegTrial trial;
      trial.label = static_cast<Label>(k + 1);
      trial.fs = cfg.fs;
      trial.data = Matrix::Zero(static_cast<Eigen::Index>(cfg.channels), static_cast<Eigen::Index>(cfg.samples));
      for (std::size_t n = 0; n < cfg.samples; ++n) {
        const double time = static_cast<double>(n) / cfg.fs;
        const double envelope = 1.0 + 0.5 * std::sin(two_pi * f_mod * time + phase_mod);
        const double source = envelope * std::sin(two_pi * f * time + phase);
        for (std::size_t i = 0; i < band.channels.size(); ++i)
          trial.data(static_cast<Eigen::Index>(band.channels[i]), static_cast<Eigen::Index>(n)) =
              gains[k][i] * source;
      }
      if (noise_sd > 0)
        for (Eigen::Index i = 0; i < trial.data.size(); ++i)
          trial.data.data()[i] += noise_sd * standard_normal(rng);
      out.push_back(std::move(trial));
    }
  }
  return out;
}

/// Draws trials_per_class + test_per_class trials per class and deals the
/// first trials_per_class of every class to the training set, the rest to
/// the test set. Both sets share the class spatial gains.
inline std::pair<std::vector<EegTrial>, std::vector<EegTrial>> synth_train_test(const SynthConfig& cfg,
                                                                                std::size_t test_per_class) {
  SynthConfig all = cfg;
  all.trials_per_class = cfg.trials_per_class + test_per_class;
  auto trials = synth_dataset(all);
  std::pair<std::vector<EegTrial>, std::vector<EegTrial>> out;
  for (std::size_t i = 0; i < trials.size(); ++i)
    (i % all.trials_per_class < cfg.trials_per_class ? out.first : out.second).push_back(std::move(trials[i]));
  return out;
}

}  // namespace sbci::data

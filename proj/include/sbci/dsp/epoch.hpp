#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "sbci/types.hpp"

namespace sbci::dsp {

struct EpochError {
  std::size_t onset_index;
  std::string message;
};

struct EpochResult {
  std::vector<EegTrial> epochs;
  std::vector<std::size_t> onset_index;  // which onset produced each epoch
  std::vector<EpochError> errors;
};

/// Cuts [onset + t_start*fs, onset + t_start*fs + round((t_end - t_start)*fs))
/// out of a channels x samples recording for each cue onset. Windows that
/// fall outside the recording are reported in `errors`; the rest are kept.
inline EpochResult epoch_extract(const Matrix& recording, std::span<const std::size_t> onsets,
                                 double t_start = 0.5, double t_end = 2.5, double fs = 250.0,
                                 std::span<const Label> labels = {}) {
  if (!(fs > 0)) throw ConfigError("sampling rate must be positive");
  const auto length = static_cast<long long>(std::llround((t_end - t_start) * fs));
  if (length <= 0)
    throw ConfigError("epoch window [" + std::to_string(t_start) + ", " + std::to_string(t_end) +
                      ") s is empty");
  if (!labels.empty() && labels.size() != onsets.size())
    throw ConfigError("got " + std::to_string(labels.size()) + " labels for " +
                      std::to_string(onsets.size()) + " onsets");
  const auto offset = static_cast<long long>(std::llround(t_start * fs));
  const auto total = static_cast<long long>(recording.cols());

  EpochResult r;
  for (std::size_t i = 0; i < onsets.size(); ++i) {
    const long long begin = static_cast<long long>(onsets[i]) + offset;
    if (begin < 0 || begin + length > total) {
      r.errors.push_back({i, "epoch " + std::to_string(i) + " spans samples [" +
                                 std::to_string(begin) + ", " + std::to_string(begin + length) +
                                 ") outside a recording of " + std::to_string(total)});
      continue;
    }
    EegTrial t;
    t.data = recording.middleCols(begin, length);
    t.label = labels.empty() ? kUnlabeled : labels[i];
    t.fs = fs;
    r.epochs.push_back(std::move(t));
    r.onset_index.push_back(i);
  }
  return r;
}

}  // namespace sbci::dsp

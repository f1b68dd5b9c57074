#pragma once

// Trial archive: a flat container of equally shaped labeled trials.
//
//   offset  size  field
//   0       8     magic "SBCITRLS"
//   8       4     version (u32, currently 1)
//   12      4     kind (u32): 0 = raw trials, 1 = covariance features
//   16      4     channels N_ch (u32)
//   20      4     samples N_s (u32); equals N_ch for features
//   24      8     sampling rate fs (f64)
//   32      4     class count K (u32)
//   36      4     trial count n (u32)
//   40      4n    labels (u32 each), 1..K or 0 = unlabeled
//   40+4n   ...   payload: n * N_ch * N_s f32, trial after trial, each trial
//                 channel-major (all samples of channel 0, then channel 1, ...)
//
// Every integer and float is little-endian. Raw trials are cue-locked: the
// cue onset sits at sample 0 of every trial.

#include <bit>
#include <span>
#include <vector>

#include "sbci/binary_io.hpp"
#include "sbci/types.hpp"

namespace sbci::data {

inline constexpr char kArchiveMagic[] = "SBCITRLS";
inline constexpr std::uint32_t kArchiveVersion = 1;

enum class ArchiveKind : std::uint32_t { raw = 0, features = 1 };

struct TrialArchive {
  ArchiveKind kind = ArchiveKind::raw;
  std::size_t channels = 0;
  std::size_t samples = 0;
  double fs = 250.0;
  int classes = 0;
  std::vector<EegTrial> trials;
};

inline std::size_t payload_bytes(const TrialArchive& a) {
  return a.trials.size() * a.channels * a.samples * 4;
}

inline io::Bytes write_archive(const TrialArchive& a) {
  if (a.kind == ArchiveKind::features && a.channels != a.samples)
    throw FormatError("feature archive must hold square matrices");
  io::Bytes out;
  io::put_bytes(out, std::string_view(kArchiveMagic, 8));
  io::put_u32(out, kArchiveVersion);
  io::put_u32(out, static_cast<std::uint32_t>(a.kind));
  io::put_u32(out, static_cast<std::uint32_t>(a.channels));
  io::put_u32(out, static_cast<std::uint32_t>(a.samples));
  io::put_u64(out, std::bit_cast<std::uint64_t>(a.fs));
  io::put_u32(out, static_cast<std::uint32_t>(a.classes));
  io::put_u32(out, static_cast<std::uint32_t>(a.trials.size()));
  for (std::size_t i = 0; i < a.trials.size(); ++i) {
    const auto& t = a.trials[i];
    if (t.channels() != a.channels || t.samples() != a.samples)
      throw ShapeError("trial " + std::to_string(i) + " is " + std::to_string(t.channels()) + "x" +
                       std::to_string(t.samples()) + ", archive is " + std::to_string(a.channels) +
                       "x" + std::to_string(a.samples));
    if (t.label < 0 || t.label > a.classes)
      throw FormatError("trial " + std::to_string(i) + " label " + std::to_string(t.label) +
                        " outside 0.." + std::to_string(a.classes));
    io::put_u32(out, static_cast<std::uint32_t>(t.label));
  }
  out.reserve(out.size() + payload_bytes(a));
  for (const auto& t : a.trials)
    for (Eigen::Index k = 0; k < t.data.size(); ++k) io::put_f32(out, static_cast<float>(t.data.data()[k]));
  return out;
}

inline TrialArchive read_archive(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes);
  if (r.remaining() < 8 || r.bytes(8) != std::string_view(kArchiveMagic, 8))
    throw FormatError("archive: bad magic");
  const auto version = r.u32();
  if (version != kArchiveVersion) throw FormatError("archive: unsupported version " + std::to_string(version));
  TrialArchive a;
  const auto kind = r.u32();
  if (kind > 1) throw FormatError("archive: unknown kind " + std::to_string(kind));
  a.kind = static_cast<ArchiveKind>(kind);
  a.channels = r.u32();
  a.samples = r.u32();
  a.fs = std::bit_cast<double>(r.u64());
  a.classes = static_cast<int>(r.u32());
  const std::size_t n = r.u32();
  if (a.channels == 0 || a.samples == 0) throw FormatError("archive: zero-sized trial shape");
  if (!(a.fs > 0) || !std::isfinite(a.fs)) throw FormatError("archive: invalid sampling rate");
  if (r.remaining() < 4 * n) throw FormatError("archive: truncated label block");
  std::vector<Label> labels(n);
  for (auto& l : labels) {
    const auto v = r.u32();
    if (v > static_cast<std::uint32_t>(a.classes))
      throw FormatError("archive: label " + std::to_string(v) + " outside 0.." + std::to_string(a.classes));
    l = static_cast<Label>(v);
  }
  const std::size_t expected = n * a.channels * a.samples * 4;
  if (r.remaining() != expected)
    throw FormatError("archive: payload is " + std::to_string(r.remaining()) + " bytes, header implies " +
                      std::to_string(expected));
  a.trials.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& t = a.trials[i];
    t.label = labels[i];
    t.fs = a.fs;
    t.data.resize(static_cast<Eigen::Index>(a.channels), static_cast<Eigen::Index>(a.samples));
    for (Eigen::Index k = 0; k < t.data.size(); ++k) t.data.data()[k] = r.f32();
  }
  return a;
}

inline void save_archive(const std::string& path, const TrialArchive& a) { io::write_file(path, write_archive(a)); }
inline TrialArchive load_archive(const std::string& path) {
  const auto bytes = io::read_file(path);
  return read_archive(bytes);
}

inline std::vector<CovarianceFeature> to_features(const TrialArchive& a) {
  if (a.kind != ArchiveKind::features) throw FormatError("archive holds raw trials, not covariance features");
  std::vector<CovarianceFeature> out;
  out.reserve(a.trials.size());
  for (const auto& t : a.trials) out.push_back({t.data, t.label});
  return out;
}

inline TrialArchive from_features(std::span<const CovarianceFeature> zs, int classes, double fs) {
  TrialArchive a;
  a.kind = ArchiveKind::features;
  a.fs = fs;
  a.classes = classes;
  if (!zs.empty()) a.channels = a.samples = static_cast<std::size_t>(zs.front().matrix.rows());
  for (const auto& z : zs) a.trials.push_back({z.matrix, z.label, fs});
  return a;
}

}  // namespace sbci::data

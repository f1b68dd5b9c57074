#pragma once

// Butterworth bandpass design as second-order sections, and causal /
// forward-backward application.
//
// Design path: analog lowpass prototype of the requested order, lowpass to
// bandpass substitution s -> (s^2 + W0^2) / (s * BW) around band edges
// prewarped with W = 2 fs tan(pi f / fs), then the bilinear transform
// z = (2 fs + s) / (2 fs - s). An order-N design has 2N poles and N biquads,
// each with one zero at z = +1 and one at z = -1.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sbci/types.hpp"

namespace sbci::dsp {

/// y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;

  std::array<std::complex<double>, 2> poles() const {
    const std::complex<double> disc = std::sqrt(std::complex<double>(a1 * a1 - 4.0 * a2, 0.0));
    return {(-a1 + disc) / 2.0, (-a1 - disc) / 2.0};
  }

  bool stable() const {
    const auto p = poles();
    return std::abs(p[0]) < 1.0 && std::abs(p[1]) < 1.0;
  }

  double pole_radius() const {
    const auto p = poles();
    return std::max(std::abs(p[0]), std::abs(p[1]));
  }
};

struct SosFilter {
  std::vector<Biquad> sections;
  int order = 0;
  double f_lo = 0, f_hi = 0, fs = 0;

  bool stable() const {
    return std::all_of(sections.begin(), sections.end(), [](const Biquad& s) { return s.stable(); });
  }
};

/// Complex response of the cascade at frequency f (Hz).
inline std::complex<double> frequency_response(const SosFilter& f, double hz) {
  const double w = 2.0 * std::numbers::pi * hz / f.fs;
  const std::complex<double> z1 = std::polar(1.0, -w), z2 = z1 * z1;
  std::complex<double> h(1.0, 0.0);
  for (const auto& s : f.sections) h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  return h;
}

inline double magnitude_db(const SosFilter& f, double hz) {
  return 20.0 * std::log10(std::abs(frequency_response(f, hz)));
}

inline SosFilter design_bandpass(int order, double f_lo, double f_hi, double fs) {
  if (order < 1) throw DesignError("filter order must be >= 1, got " + std::to_string(order));
  if (!(fs > 0) || !(f_lo > 0) || !(f_lo < f_hi) || !(f_hi < fs / 2))
    throw DesignError("band edges must satisfy 0 < f_lo < f_hi < fs/2, got f_lo=" +
                      std::to_string(f_lo) + " f_hi=" + std::to_string(f_hi) +
                      " fs=" + std::to_string(fs));
  using C = std::complex<double>;
  const double pi = std::numbers::pi;
  const double k = 2.0 * fs;
  const double w_lo = k * std::tan(pi * f_lo / fs);
  const double w_hi = k * std::tan(pi * f_hi / fs);
  const double bw = w_hi - w_lo;
  const double w0_sq = w_lo * w_hi;

  std::vector<C> zpoles;
  for (int i = 1; i <= order; ++i) {
    const C proto = std::polar(1.0, pi * (2.0 * i + order - 1) / (2.0 * order));
    const C a = proto * bw / 2.0;
    const C r = std::sqrt(a * a - w0_sq);
    for (const C s : {a + r, a - r}) zpoles.push_back((k + s) / (k - s));
  }

  // Pair conjugates into sections; leftover real poles pair among themselves.
  constexpr double imag_tol = 1e-12;
  std::vector<Biquad> sections;
  std::vector<double> reals;
  for (const C& p : zpoles) {
    if (p.imag() > imag_tol)
      sections.push_back({1.0, 0.0, -1.0, -2.0 * p.real(), std::norm(p)});
    else if (std::abs(p.imag()) <= imag_tol)
      reals.push_back(p.real());
  }
  std::sort(reals.begin(), reals.end());
  for (std::size_t i = 0; i + 1 < reals.size(); i += 2)
    sections.push_back({1.0, 0.0, -1.0, -(reals[i] + reals[i + 1]), reals[i] * reals[i + 1]});
  if (sections.size() != static_cast<std::size_t>(order))
    throw DesignError("pole pairing produced " + std::to_string(sections.size()) +
                      " sections for order " + std::to_string(order));

  std::stable_sort(sections.begin(), sections.end(),
                   [](const Biquad& a, const Biquad& b) { return a.pole_radius() < b.pole_radius(); });

  SosFilter f{std::move(sections), order, f_lo, f_hi, fs};
  // Unit gain at the digital image of the analog center frequency.
  const double center_hz = fs / pi * std::atan(std::sqrt(w0_sq) / k);
  const double gain = 1.0 / std::abs(frequency_response(f, center_hz));
  const double per_section = std::pow(gain, 1.0 / order);
  for (auto& s : f.sections) {
    s.b0 *= per_section;
    s.b1 *= per_section;
    s.b2 *= per_section;
  }
  if (!f.stable()) throw DesignError("designed filter has a pole on or outside the unit circle");
  return f;
}

namespace detail {

inline void run_cascade(const SosFilter& f, std::span<double> x) {
  for (const auto& s : f.sections) {
    double z1 = 0, z2 = 0;  // transposed direct form II state
    for (auto& v : x) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
}

}  // namespace detail

/// Filters a single sequence. Causal with zero initial conditions unless
/// `zero_phase`, which runs the cascade forward then backward.
inline std::vector<double> filter_apply(const SosFilter& f, std::span<const double> x,
                                        bool zero_phase = false) {
  if (!f.stable()) throw DesignError("refusing to run a filter with an unstable section");
  std::vector<double> y(x.begin(), x.end());
  for (double v : y)
    if (!std::isfinite(v)) throw DegenerateInputError("filter input contains a non-finite sample");
  detail::run_cascade(f, y);
  if (zero_phase) {
    std::reverse(y.begin(), y.end());
    detail::run_cascade(f, y);
    std::reverse(y.begin(), y.end());
  }
  return y;
}

/// Filters every row (channel) of a channels x samples matrix independently.
inline Matrix filter_apply(const SosFilter& f, const Matrix& x, bool zero_phase = false) {
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.rows(); ++c) {
    const auto row = filter_apply(f, std::span<const double>(x.row(c).data(), x.cols()), zero_phase);
    std::copy(row.begin(), row.end(), y.row(c).data());
  }
  return y;
}

inline EegTrial filter_apply(const SosFilter& f, const EegTrial& t, bool zero_phase = false) {
  return {filter_apply(f, t.data, zero_phase), t.label, t.fs};
}

}  // namespace sbci::dsp

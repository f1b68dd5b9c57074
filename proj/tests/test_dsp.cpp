#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "checks.hpp"
#include "sbci/preprocess.hpp"

using namespace sbci;
using namespace sbci::dsp;
using Catch::Approx;

namespace {

const SosFilter& recipe_filter() {
  static const SosFilter f = design_bandpass(5, 7.0, 30.0, 250.0);
  return f;
}

std::vector<double> sine(double hz, double fs, std::size_t n) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(2 * std::numbers::pi * hz * i / fs);
  return x;
}

}  // namespace

TEST_CASE("bandpass design hits the band edges") {
  const auto n = checks::filter_numbers();
  CHECK(n.db_lo >= -3.1);
  CHECK(n.db_lo <= -2.9);
  CHECK(n.db_hi >= -3.1);
  CHECK(n.db_hi <= -2.9);
  CHECK(n.db_dc <= -60);
  CHECK(n.db_nyquist <= -60);
  CHECK(n.db_mid >= -1.0);
  CHECK(n.stable);
  CHECK(n.sections == 5);
}

TEST_CASE("every section has its poles inside the unit circle") {
  for (int order : {1, 2, 3, 5, 8})
    for (auto [lo, hi] : {std::pair{7.0, 30.0}, {1.0, 40.0}, {0.5, 120.0}, {60.0, 61.0}}) {
      const auto f = design_bandpass(order, lo, hi, 250.0);
      for (const auto& s : f.sections)
        for (const auto& p : s.poles()) CHECK(std::abs(p) < 1.0);
      CHECK(magnitude_db(f, lo) == Approx(-3.0103).margin(0.1));
      CHECK(magnitude_db(f, hi) == Approx(-3.0103).margin(0.1));
    }
}

TEST_CASE("bandpass design rejects bad edges") {
  CHECK_THROWS_AS(design_bandpass(5, 7, 130, 250), DesignError);
  CHECK_THROWS_AS(design_bandpass(5, 30, 7, 250), DesignError);
  CHECK_THROWS_AS(design_bandpass(5, 0, 30, 250), DesignError);
  CHECK_THROWS_AS(design_bandpass(0, 7, 30, 250), DesignError);
}

TEST_CASE("filtering") {
  const auto& f = recipe_filter();
  SECTION("zero in, zero out") {
    const std::vector<double> x(600, 0.0);
    for (double v : filter_apply(f, std::span<const double>(x))) CHECK(v == 0.0);
  }
  SECTION("15 Hz steady state") {
    const auto x = sine(15, 250, 1500);
    const auto y = filter_apply(f, std::span<const double>(x));
    double peak = 0;
    for (std::size_t i = 500; i < y.size(); ++i) peak = std::max(peak, std::abs(y[i]));
    const double gain = std::abs(frequency_response(f, 15));
    CHECK(peak >= 0.89 * gain);
    CHECK(peak <= 1.0 * gain + 1e-9);
  }
  SECTION("dc step dies out") {
    const std::vector<double> x(1500, 1.0);
    const auto y = filter_apply(f, std::span<const double>(x));
    for (std::size_t i = 500; i < y.size(); ++i) CHECK(std::abs(y[i]) <= 1e-3);
  }
  SECTION("linearity") {
    Rng rng(8);
    std::vector<double> a(700), b(700), mix(700);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = standard_normal(rng);
      b[i] = standard_normal(rng);
      mix[i] = 2.5 * a[i] - 0.75 * b[i];
    }
    const auto fa = filter_apply(f, std::span<const double>(a));
    const auto fb = filter_apply(f, std::span<const double>(b));
    const auto fm = filter_apply(f, std::span<const double>(mix));
    double scale = 0;
    for (double v : fm) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < fm.size(); ++i) CHECK(std::abs(fm[i] - (2.5 * fa[i] - 0.75 * fb[i])) <= 1e-6 * scale);
  }
  SECTION("zero phase keeps a centred sinusoid in phase") {
    const auto x = sine(15, 250, 1500);
    const auto y = filter_apply(f, std::span<const double>(x), true);
    const double g2 = std::norm(frequency_response(f, 15));
    for (std::size_t i = 600; i < 900; ++i) CHECK(y[i] == Approx(g2 * x[i]).margin(1e-3));
  }
  SECTION("channels are independent") {
    Matrix m(2, 400);
    Rng rng(2);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
    const auto y = filter_apply(f, m);
    std::vector<double> row(m.row(1).begin(), m.row(1).end());
    const auto y1 = filter_apply(f, std::span<const double>(row));
    for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y(1, static_cast<Eigen::Index>(i)) == y1[i]);
  }
  SECTION("an unstable section is refused") {
    SosFilter bad = f;
    bad.sections[0].a2 = 1.5;
    const std::vector<double> x(10, 1.0);
    CHECK_THROWS_AS(filter_apply(bad, std::span<const double>(x)), DesignError);
  }
}

TEST_CASE("epoch extraction") {
  Matrix rec(3, 3000);
  for (Eigen::Index c = 0; c < rec.rows(); ++c)
    for (Eigen::Index s = 0; s < rec.cols(); ++s) rec(c, s) = 1000.0 * c + s;
  SECTION("default window") {
    const std::size_t onsets[] = {1000, 2000};
    const auto r = epoch_extract(rec, onsets);
    REQUIRE(r.epochs.size() == 2);
    CHECK(r.epochs[0].samples() == 500);
    CHECK(r.epochs[0].data(0, 0) == 1125);
    CHECK(r.epochs[0].data(0, 499) == 1624);
    CHECK(r.epochs[1].data(0, 0) == 2125);
    CHECK(r.epochs[1].data(0, 499) == 2624);
    CHECK(r.epochs[1].data(2, 10) == rec(2, 2135));
  }
  SECTION("empty window") {
    const std::size_t onsets[] = {1000};
    CHECK_THROWS_AS(epoch_extract(rec, onsets, 1.0, 1.0), ConfigError);
  }
  SECTION("out of bounds window is reported, the rest kept") {
    const std::size_t onsets[] = {1000, 2800, 100};
    const auto r = epoch_extract(rec, onsets);
    CHECK(r.epochs.size() == 2);
    REQUIRE(r.errors.size() == 1);
    CHECK(r.errors[0].onset_index == 1);
    CHECK(r.onset_index == std::vector<std::size_t>{0, 2});
  }
}

TEST_CASE("covariance feature") {
  SECTION("identity") {
    EegTrial t;
    t.data = Matrix::Identity(2, 2);
    const auto z = covariance_feature(t).matrix;
    CHECK(z(0, 0) == Approx(0.5));
    CHECK(z(1, 1) == Approx(0.5));
    CHECK(z(0, 1) == 0.0);
  }
  SECTION("random trials against the naive oracle") {
    const auto n = checks::covariance_numbers(20, 17);
    CHECK(n.max_trace_error <= 1e-9);
    CHECK(n.max_asymmetry <= 1e-9);
    CHECK(n.min_eigenvalue >= -1e-9);
    CHECK(n.max_oracle_rel_error <= 1e-9);
  }
  SECTION("degenerate") {
    EegTrial t;
    t.data = Matrix::Zero(3, 10);
    CHECK_THROWS_AS(covariance_feature(t), DegenerateInputError);
  }
  SECTION("amplitude and sign flips") {
    Rng rng(6);
    EegTrial t;
    t.data.resize(4, 50);
    for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data.data()[i] = standard_normal(rng);
    const auto z = covariance_feature(t).matrix;
    EegTrial scaled = t;
    scaled.data *= -37.5;
    CHECK((covariance_feature(scaled).matrix - z).cwiseAbs().maxCoeff() <= 1e-9);
    EegTrial flipped = t;
    flipped.data.row(2) *= -1;
    auto zf = covariance_feature(flipped).matrix;
    zf.row(2) *= -1;
    zf.col(2) *= -1;
    CHECK((zf - z).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("preprocess turns raw cue-locked trials into covariance features") {
  Rng rng(12);
  std::vector<EegTrial> raw(3);
  for (auto& t : raw) {
    t.data.resize(4, 750);
    for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data.data()[i] = standard_normal(rng);
    t.label = 2;
  }
  PreprocessConfig cfg;
  const auto z = preprocess(std::span<const EegTrial>(raw), cfg);
  REQUIRE(z.size() == 3);
  CHECK(z[0].matrix.rows() == 4);
  CHECK(z[0].matrix.trace() == Approx(1.0).margin(1e-9));
  CHECK(z[0].label == 2);
}

#include <catch2/catch_amalgamated.hpp>

#include <complex>
#include <filesystem>
#include <numbers>
#include <set>

#include "sbci/data/archive.hpp"
#include "sbci/data/split.hpp"
#include "sbci/data/synth.hpp"
#include "sbci/preprocess.hpp"

using namespace sbci;
using namespace sbci::data;

namespace {

TrialArchive random_archive(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  TrialArchive a;
  a.channels = 5;
  a.samples = 33;
  a.classes = 4;
  a.fs = 128.0;
  for (std::size_t i = 0; i < n; ++i) {
    EegTrial t;
    t.fs = a.fs;
    t.label = static_cast<Label>(uniform_index(rng, 5));
    t.data.resize(5, 33);
    for (Eigen::Index k = 0; k < t.data.size(); ++k)
      t.data.data()[k] = static_cast<float>(standard_normal(rng));  // f32-exact
    a.trials.push_back(std::move(t));
  }
  return a;
}

std::size_t dominant_bin(const Matrix& x, Eigen::Index row) {
  const auto n = x.cols();
  std::size_t best = 0;
  double best_power = -1;
  for (Eigen::Index k = 1; k < n / 2; ++k) {
    std::complex<double> acc = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      acc += x(row, i) * std::polar(1.0, -2 * std::numbers::pi * double(k * i) / double(n));
    if (std::norm(acc) > best_power) {
      best_power = std::norm(acc);
      best = static_cast<std::size_t>(k);
    }
  }
  return best;
}

std::vector<Label> class_labels(int k, std::size_t per_class) {
  std::vector<Label> out;
  for (std::size_t i = 0; i < per_class; ++i)
    for (int c = 1; c <= k; ++c) out.push_back(c);
  return out;
}

}  // namespace

TEST_CASE("archive sizes") {
  TrialArchive a;
  a.channels = 22;
  a.samples = 500;
  a.classes = 4;
  EegTrial t;
  t.data = Matrix::Zero(22, 500);
  t.label = 3;
  a.trials.push_back(t);
  CHECK(payload_bytes(a) == 44000);
  CHECK(write_archive(a).size() == 40 + 4 + 44000);
}

TEST_CASE("empty archive round-trips") {
  TrialArchive a;
  a.channels = 22;
  a.samples = 750;
  a.classes = 4;
  const auto bytes = write_archive(a);
  CHECK(bytes.size() == 40);
  const auto b = read_archive(bytes);
  CHECK(b.trials.empty());
  CHECK(b.channels == 22);
  CHECK(write_archive(b) == bytes);
}

TEST_CASE("random archive round-trips bitwise") {
  const auto a = random_archive(50, 4);
  const auto bytes = write_archive(a);
  const auto b = read_archive(bytes);
  REQUIRE(b.trials.size() == 50);
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(b.trials[i].label == a.trials[i].label);
    CHECK(b.trials[i].data == a.trials[i].data);
  }
  CHECK(b.fs == 128.0);
  CHECK(write_archive(b) == bytes);

  const auto path = (std::filesystem::temp_directory_path() / "sbci_test_archive.sbta").string();
  save_archive(path, a);
  CHECK(write_archive(load_archive(path)) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("archive rejects damage") {
  auto bytes = write_archive(random_archive(3, 1));
  SECTION("magic") {
    bytes[3] = 'x';
    CHECK_THROWS_AS(read_archive(bytes), FormatError);
  }
  SECTION("version") {
    bytes[8] = 2;
    CHECK_THROWS_AS(read_archive(bytes), FormatError);
  }
  SECTION("truncated payload") {
    bytes.pop_back();
    CHECK_THROWS_AS(read_archive(bytes), FormatError);
  }
  SECTION("extra payload") {
    bytes.push_back(0);
    CHECK_THROWS_AS(read_archive(bytes), FormatError);
  }
  SECTION("label past K") {
    bytes[40] = 9;
    CHECK_THROWS_AS(read_archive(bytes), FormatError);
  }
  SECTION("header only") {
    bytes.resize(20);
    CHECK_THROWS(read_archive(bytes));
  }
}

TEST_CASE("feature archives") {
  Rng rng(2);
  std::vector<CovarianceFeature> zs;
  for (int i = 0; i < 4; ++i) zs.push_back({Matrix::Identity(3, 3) / 3.0, i % 2 + 1});
  const auto a = from_features(zs, 2, 250.0);
  const auto back = to_features(read_archive(write_archive(a)));
  REQUIRE(back.size() == 4);
  CHECK(back[1].label == 2);
  CHECK((back[0].matrix - zs[0].matrix).cwiseAbs().maxCoeff() <= 1e-7);
  CHECK_THROWS_AS(to_features(random_archive(1, 1)), FormatError);
}

TEST_CASE("noise-free synthetic trials peak at the class frequency") {
  auto cfg = default_synth_config();
  auto j = nlohmann::json(cfg);
  j["snr"] = nullptr;
  from_json(j, cfg);
  REQUIRE(std::isinf(cfg.snr));
  for (auto& b : cfg.bands) b.bandwidth_hz = 0;
  cfg.trials_per_class = 3;
  const auto trials = synth_dataset(cfg);
  REQUIRE(trials.size() == 12);
  for (const auto& t : trials) {
    const auto& band = cfg.bands[static_cast<std::size_t>(t.label - 1)];
    // 750 samples at 250 Hz: a bin is 1/3 Hz
    const auto expected = static_cast<std::size_t>(std::lround(band.center_hz * 3));
    CHECK(dominant_bin(t.data, static_cast<Eigen::Index>(band.channels[0])) == expected);
    CHECK(t.data.row(21).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("synthetic data is a pure function of the config") {
  auto cfg = default_synth_config();
  cfg.trials_per_class = 4;
  const auto a = synth_dataset(cfg), b = synth_dataset(cfg);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].data == b[i].data);
  cfg.seed = 8;
  CHECK(synth_dataset(cfg)[0].data != a[0].data);

  auto bad = default_synth_config();
  bad.bands[2].center_hz = 140;
  CHECK_THROWS_AS(synth_dataset(bad), ConfigError);
}

TEST_CASE("synthetic classes separate in feature space") {
  const auto raw = synth_dataset(default_synth_config());
  const auto z = preprocess(std::span<const EegTrial>(raw), PreprocessConfig{});
  double within = 0, between = 0;
  std::size_t nw = 0, nb = 0;
  for (std::size_t i = 0; i < z.size(); ++i)
    for (std::size_t j = i + 1; j < z.size(); ++j) {
      const double d = (z[i].matrix - z[j].matrix).norm();
      if (z[i].label == z[j].label) {
        within += d;
        ++nw;
      } else {
        between += d;
        ++nb;
      }
    }
  CHECK(between / nb > within / nw);
}

TEST_CASE("train/test synthesis deals each class") {
  auto cfg = default_synth_config();
  cfg.trials_per_class = 5;
  const auto [tr, te] = synth_train_test(cfg, 3);
  CHECK(tr.size() == 20);
  CHECK(te.size() == 12);
  CHECK(std::count_if(te.begin(), te.end(), [](const EegTrial& t) { return t.label == 4; }) == 3);
}

TEST_CASE("stratified splits") {
  const auto labels = class_labels(4, 60);
  SECTION("50/50") {
    const double f[] = {0.5, 0.5};
    const auto parts = stratified_split(labels, f, 7);
    for (const auto& p : parts)
      for (int c = 1; c <= 4; ++c)
        CHECK(std::count_if(p.begin(), p.end(), [&](std::size_t i) { return labels[i] == c; }) == 30);
    CHECK(parts == stratified_split(labels, f, 7));
    CHECK(parts != stratified_split(labels, f, 8));
  }
  SECTION("identity") {
    const double f[] = {1.0};
    const auto parts = stratified_split(labels, f, 3);
    REQUIRE(parts.size() == 1);
    for (std::size_t i = 0; i < labels.size(); ++i) CHECK(parts[0][i] == i);
  }
  SECTION("five folds") {
    const auto folds = stratified_folds(labels, 5, 7);
    REQUIRE(folds.size() == 5);
    std::multiset<std::size_t> seen;
    for (const auto& f : folds) {
      for (int c = 1; c <= 4; ++c)
        CHECK(std::count_if(f.begin(), f.end(), [&](std::size_t i) { return labels[i] == c; }) == 12);
      seen.insert(f.begin(), f.end());
    }
    CHECK(seen.size() == labels.size());
    CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == labels.size());
  }
  SECTION("uneven fractions still partition") {
    const double f[] = {0.3, 0.45, 0.25};
    const auto parts = stratified_split(labels, f, 1);
    std::set<std::size_t> seen;
    std::size_t total = 0;
    for (const auto& p : parts) {
      seen.insert(p.begin(), p.end());
      total += p.size();
    }
    CHECK(total == labels.size());
    CHECK(seen.size() == labels.size());
  }
  SECTION("errors") {
    const double bad_sum[] = {0.5, 0.4};
    CHECK_THROWS_AS(stratified_split(labels, bad_sum, 1), ConfigError);
    CHECK_THROWS_AS(stratified_folds(class_labels(2, 3), 5, 1), ConfigError);
  }
}

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "checks.hpp"
#include "sbci/data/synth.hpp"
#include "sbci/preprocess.hpp"
#include "sbci/siamese.hpp"

using namespace sbci;
using Catch::Approx;

namespace {

CovarianceFeature scaled_identity(std::size_t n) { return {Matrix::Identity(n, n) / double(n), 1}; }

CovarianceFeature random_feature(std::size_t n, Rng& rng) {
  EegTrial t;
  t.data.resize(static_cast<Eigen::Index>(n), 60);
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data.data()[i] = standard_normal(rng);
  return dsp::covariance_feature(t);
}

// narrower than the full network so the toy training stays quick
ArchSpec toy_arch() {
  ArchSpec a;
  a.conv1_channels = 4;
  a.conv2_channels = 8;
  a.fc1_units = 64;
  a.fc2_units = 64;
  return a;
}

struct Toy {
  SupersetSplit train, held_out;
};

// Two synthetic classes as the two supersets, 60 trials each for training
// and 20 each held out.
const Toy& toy() {
  static const Toy t = [] {
    auto cfg = data::default_synth_config();
    cfg.classes = 2;
    cfg.bands.resize(2);
    cfg.trials_per_class = 60;
    cfg.seed = 7;
    auto [tr, te] = data::synth_train_test(cfg, 20);
    const auto ftr = preprocess(std::span<const EegTrial>(tr), PreprocessConfig{});
    const auto fte = preprocess(std::span<const EegTrial>(te), PreprocessConfig{});
    const auto m = build_coding_matrix(Scheme::ovr, 2);
    return Toy{form_supersets(ftr, m, 0), form_supersets(fte, m, 0)};
  }();
  return t;
}

}  // namespace

TEST_CASE("contrastive loss closed forms") {
  CHECK(contrastive_loss(0.3, kSimilar, 0.5).loss == Approx(0.045).epsilon(1e-15));
  CHECK(contrastive_loss(0.3, kDissimilar, 0.5).loss == Approx(0.02).epsilon(1e-15));
  CHECK(contrastive_loss(0.7, kDissimilar, 0.5).loss == 0.0);
  CHECK(contrastive_loss(0.7, kDissimilar, 0.5).grad == 0.0);
  CHECK(contrastive_loss(0.3, kSimilar, 0.5, 2.0).grad == Approx(0.6));
  CHECK(contrastive_loss(0.3, kDissimilar, 0.5, 2.0).grad == Approx(-0.4));
  // zero exactly on the two floors
  CHECK(contrastive_loss(0.0, kSimilar, 0.5).loss == 0.0);
  CHECK(contrastive_loss(0.5, kDissimilar, 0.5).loss == 0.0);
  CHECK(contrastive_loss(0.1, kSimilar, 0.5).loss > 0.0);
  CHECK(contrastive_loss(0.49, kDissimilar, 0.5).loss > 0.0);
}

TEST_CASE("verdict threshold is strict") {
  CHECK(verdict(0.25, 0.25) == PairVerdict::different);
  CHECK(verdict(0.2499999, 0.25) == PairVerdict::same);
  CHECK(verdict(0.0, 1e-12) == PairVerdict::same);
}

TEST_CASE("full-size embedding") {
  auto model = make_siamese<float>(ArchSpec{}, 0.5, 3);
  REQUIRE(model.net.layers.size() == 12);
  CHECK(model.arch.flatten_size() == 10368);
  CHECK(model.net.layers[7].params.weights.shape == nn::Shape{512, 10368});
  const auto z = scaled_identity(22);
  const auto a = embed(model, z), b = embed(model, z);
  CHECK(a.size() == 512);
  CHECK(a == b);
  for (double v : a) CHECK(std::isfinite(v));
  CHECK(distance(model, z, z) == 0.0);
  CHECK(predict_pair(model, z, z, 0.25) == PairVerdict::same);
  CHECK_THROWS_AS(embed(model, scaled_identity(20)), ShapeError);
}

TEST_CASE("fresh embeddings of I/22 are not all zero") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto model = make_siamese<float>(ArchSpec{}, 0.5, seed);
    const auto e = embed(model, scaled_identity(22));
    double norm = 0;
    for (double v : e) norm += v * v;
    INFO("seed " << seed);
    CHECK(norm > 0);
  }
}

TEST_CASE("distance is a metric on embeddings") {
  auto model = make_siamese<float>(toy_arch(), 0.5, 5);
  Rng rng(9);
  for (int rep = 0; rep < 10; ++rep) {
    const auto a = random_feature(22, rng), b = random_feature(22, rng), c = random_feature(22, rng);
    CHECK(distance(model, a, b) == distance(model, b, a));
    CHECK(distance(model, a, c) <= distance(model, a, b) + distance(model, b, c) + 1e-6);
    CHECK(distance(model, a, b) >= 0);
  }
}

TEST_CASE("both branches share one parameter store") {
  auto model = make_siamese<float>(toy_arch(), 0.5, 5);
  // one checkpoint copy: tensor count matches a single branch
  const auto bytes = save_model(model);
  const auto desc = nn::checkpoint_descriptor(bytes);
  CHECK(desc.at("layers").size() == model.net.layers.size());
  auto back = load_model<float>(bytes);
  Rng rng(1);
  const auto z = random_feature(22, rng);
  CHECK(embed(model, z) == embed(back, z));
}

TEST_CASE("lr 0 leaves the parameters alone") {
  const auto& t = toy();
  auto model = make_siamese<float>(toy_arch(), 0.5, 2);
  const auto before = model.net.layers[10].params.weights.data;
  TrainConfig cfg;
  cfg.lr = 0;
  cfg.epochs = 1;
  cfg.pair_subsample = 128;
  cfg.batch_size = 64;
  train(model, t.train, generate_pairs(t.train), cfg);
  CHECK(model.net.layers[10].params.weights.data == before);
}

TEST_CASE("a single identical similar pair gives zero loss and zero gradient") {
  const auto& t = toy();
  SupersetSplit one;
  one.s0 = {t.train.s0[0], t.train.s0[0]};
  // independent dropout masks would make the two sides differ
  auto arch = toy_arch();
  arch.dropout = 0;
  auto model = make_siamese<float>(arch, 0.5, 2);
  PairBatch b;
  b.pairs.push_back({0, 1, kSimilar, 1.0});
  Rng rng(0);
  model.net.zero_grad();
  const double loss = accumulate_pair_gradients(model, one, std::span<const Pair>(b.pairs), nn::Mode::train, rng);
  CHECK(loss == 0.0);
  for (auto& p : model.net.parameters())
    for (float g : p.grad->data) CHECK(g == 0.0f);
  const auto before = model.net.layers[7].params.weights.data;
  TrainConfig cfg;
  cfg.epochs = 1;
  train(model, one, b, cfg);
  CHECK(model.net.layers[7].params.weights.data == before);
}

TEST_CASE("full pair loss gradient matches finite differences through both branches") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto e = checks::stack_gradcheck(seed);
    INFO("seed " << seed << " " << e.name);
    CHECK(e.error < 1e-4);
  }
}

TEST_CASE("toy training") {
  const auto& t = toy();
  auto model = make_siamese<float>(toy_arch(), 0.5, 7);
  TrainConfig cfg;
  cfg.epochs = 12;
  cfg.batch_size = 64;
  cfg.lr = 1e-3;
  cfg.pair_subsample = 512;
  std::ostringstream log;
  const auto r = train(model, t.train, generate_pairs(t.train), cfg, nullptr, nullptr, &log);
  REQUIRE(r.history.size() == 12);
  CHECK(r.history.back().mean_loss < r.history.front().mean_loss);
  CHECK(log.str().rfind("epoch=1 loss=", 0) == 0);

  SECTION("held-out same-superset pairs") {
    std::size_t same = 0, total = 0;
    const auto& h = t.held_out;
    for (std::size_t i = 0; i < h.size(); ++i)
      for (std::size_t j = i + 1; j < h.size(); ++j) {
        if (h.superset_of(i) != h.superset_of(j)) continue;
        same += predict_pair(model, h.member(i), h.member(j), r.tau) == PairVerdict::same;
        ++total;
      }
    CHECK(static_cast<double>(same) / total > 0.9);
  }
  SECTION("bit-reproducible") {
    auto again = make_siamese<float>(toy_arch(), 0.5, 7);
    train(again, t.train, generate_pairs(t.train), cfg);
    CHECK(save_model(again) == save_model(model));
  }
}

TEST_CASE("threshold calibration") {
  const double d[] = {0.1, 0.2, 0.3, 0.6, 0.7};
  const int y[] = {kSimilar, kSimilar, kSimilar, kDissimilar, kDissimilar};
  CHECK(calibrate_threshold(d, y) == Approx(0.45));
}

TEST_CASE("train config violations are all reported") {
  TrainConfig c;
  c.batch_size = 1;
  c.epochs = 0;
  c.margin = 0.5;
  c.threshold = 0.7;
  const auto v = c.violations();
  CHECK(v.size() == 3);
  CHECK_THROWS_AS(c.validate(), ConfigError);
  TrainConfig ok;
  CHECK(ok.tau() == 0.25);
  CHECK(ok.violations().empty());
}

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "checks.hpp"
#include "sbci/nn/adam.hpp"
#include "sbci/nn/gradcheck.hpp"

using namespace sbci;
using namespace sbci::nn;
using Catch::Approx;

namespace {

LayerParams<double> conv_params(Tensor<double> w, std::size_t out_c) {
  LayerParams<double> p;
  p.kind = LayerKind::conv2d;
  p.weights = std::move(w);
  p.bias = Tensor<double>({out_c});
  return p;
}

LayerParams<double> bn_params(std::size_t f) { return make_batchnorm<double>(f).params; }

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
  Tensor<float> t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  CHECK_THROWS_AS(Tensor<float>({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(t.reshaped({5, 5}), ShapeError);
  CHECK(t.reshaped({6, 4}).shape == Shape{6, 4});
}

TEST_CASE("conv2d small cases") {
  SECTION("ones") {
    auto p = conv_params(Tensor<double>({1, 1, 3, 3}, 1.0), 1);
    const auto out = conv2d(Tensor<double>({1, 1, 3, 3}, 1.0), p);
    REQUIRE(out.shape == Shape{1, 1, 1, 1});
    CHECK(out[0] == 9.0);
  }
  SECTION("centre tap picks the interior") {
    Tensor<double> k({1, 1, 3, 3});
    k[4] = 1;
    std::vector<double> v(16);
    std::iota(v.begin(), v.end(), 1.0);
    const auto out = conv2d(Tensor<double>({1, 1, 4, 4}, v), conv_params(k, 1));
    REQUIRE(out.shape == Shape{1, 1, 2, 2});
    CHECK(out.data == Storage<double>{6, 7, 10, 11});
  }
  SECTION("zero kernel") {
    Rng rng(3);
    const auto x = checks::random_tensor({2, 3, 6, 5}, rng);
    const auto out = conv2d(x, conv_params(Tensor<double>({4, 3, 3, 3}), 4));
    for (double v : out.data) CHECK(v == 0.0);
  }
  SECTION("channel mismatch") {
    CHECK_THROWS_AS(conv2d(Tensor<double>({1, 2, 5, 5}), conv_params(Tensor<double>({1, 3, 3, 3}), 1)), ShapeError);
  }
}

TEST_CASE("conv2d is linear in the input") {
  Rng rng(11);
  auto p = conv_params(checks::random_tensor({3, 2, 3, 3}, rng), 3);
  const auto x = checks::random_tensor({2, 2, 7, 6}, rng), y = checks::random_tensor({2, 2, 7, 6}, rng);
  const double a = 1.7, b = -0.4;
  Tensor<double> mix(x.shape);
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + b * y[i];
  const auto fx = conv2d(x, p), fy = conv2d(y, p), fm = conv2d(mix, p);
  for (std::size_t i = 0; i < fm.size(); ++i) CHECK(fm[i] == Approx(a * fx[i] + b * fy[i]).margin(1e-5));
}

TEST_CASE("batchnorm examples") {
  SECTION("two-sample batch") {
    auto p = bn_params(1);
    const auto out = batchnorm(Tensor<double>({2, 1}, {0.0, 2.0}), p, Mode::train);
    CHECK(out[0] == Approx(-1.0).margin(1e-4));
    CHECK(out[1] == Approx(1.0).margin(1e-4));
  }
  SECTION("gamma 0 beta 5") {
    auto p = bn_params(3);
    p.weights.fill(0);
    p.bias.fill(5);
    Rng rng(2);
    const auto out = batchnorm(checks::random_tensor({4, 3, 2, 2}, rng), p, Mode::train);
    for (double v : out.data) CHECK(v == 5.0);
  }
  SECTION("constant batch") {
    auto p = bn_params(2);
    const auto out = batchnorm(Tensor<double>({5, 2}, 3.25), p, Mode::train);
    for (double v : out.data) CHECK(std::abs(v) <= std::sqrt(1e-5));
  }
  SECTION("batch of one in train mode") {
    auto p = bn_params(2);
    CHECK_THROWS(batchnorm(Tensor<double>({1, 2}, 1.0), p, Mode::train));
  }
  SECTION("infer uses running statistics") {
    auto p = bn_params(1);
    p.running_mean[0] = 2.0;
    p.running_var[0] = 4.0;
    const auto out = batchnorm(Tensor<double>({1, 1}, {6.0}), p, Mode::infer);
    CHECK(out[0] == Approx(4.0 / std::sqrt(4.0 + 1e-5)));
  }
}

TEST_CASE("batchnorm train output is standardized per channel") {
  Rng rng(5);
  for (int rep = 0; rep < 5; ++rep) {
    auto p = bn_params(3);
    auto x = checks::random_tensor({6, 3, 4, 4}, rng);
    for (auto& v : x.data) v = 3.0 * v + 1.5;
    const auto out = batchnorm(x, p, Mode::train);
    for (std::size_t f = 0; f < 3; ++f) {
      double s = 0, ss = 0;
      std::size_t n = 0;
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t k = 0; k < 16; ++k) {
          const double v = out[(i * 3 + f) * 16 + k];
          s += v;
          ss += v * v;
          ++n;
        }
      const double mean = s / n;
      CHECK(std::abs(mean) <= 1e-5);
      CHECK(std::abs(ss / n - mean * mean - 1.0) <= 1e-3);
    }
  }
}

TEST_CASE("batchnorm running statistics") {
  auto p = bn_params(1);
  batchnorm(Tensor<double>({2, 1}, {1.0, 3.0}), p, Mode::train);
  // the first update replaces the initial values outright
  CHECK(p.running_mean[0] == Approx(2.0));
  CHECK(p.running_var[0] == Approx(2.0));
  batchnorm(Tensor<double>({2, 1}, {5.0, 7.0}), p, Mode::train);
  CHECK(p.running_mean[0] > 2.0);
  CHECK(p.running_mean[0] < 6.0);
  for (double v : p.running_var.data) CHECK(v > 0);
}

TEST_CASE("activations") {
  const Tensor<double> z({1}, {0.0});
  CHECK(elu(z)[0] == 0.0);
  CHECK(relu(z)[0] == 0.0);
  CHECK(elu(Tensor<double>({1}, {-1.0}))[0] == Approx(std::exp(-1.0) - 1.0).margin(1e-6));
  CHECK(elu(Tensor<double>({1}, {-1.0}))[0] == Approx(-0.632121).margin(1e-6));
  CHECK(relu(Tensor<double>({2}, {-2.0, 3.0})).data == Storage<double>{0, 3});
  // derivative 1 at 0 for both
  const Tensor<double> one({1}, {1.0});
  CHECK(relu_backward(z, one)[0] == 1.0);
  CHECK(elu_backward(z, one)[0] == 1.0);
  CHECK(relu_backward(Tensor<double>({1}, {-0.1}), one)[0] == 0.0);
}

TEST_CASE("dense") {
  SECTION("hand example") {
    LayerParams<double> p;
    p.weights = Tensor<double>({2, 2}, {1, 1, 1, -1});
    p.bias = Tensor<double>({2}, {0, 1});
    CHECK(dense(Tensor<double>({1, 2}, {1, 2}), p).data == Storage<double>{3, 0});
  }
  SECTION("identity") {
    LayerParams<double> p;
    p.weights = Tensor<double>({3, 3});
    for (int i = 0; i < 3; ++i) p.weights[i * 4] = 1;
    p.bias = Tensor<double>({3});
    Rng rng(1);
    const auto x = checks::random_tensor({4, 3}, rng);
    CHECK(dense(x, p).data == x.data);
  }
  SECTION("matmul oracle") {
    Rng rng(9);
    LayerParams<double> p;
    p.weights = checks::random_tensor({4, 5}, rng);
    p.bias = checks::random_tensor({4}, rng);
    const auto x = checks::random_tensor({3, 5}, rng);
    const auto y = dense(x, p);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        double s = p.bias[j];
        for (std::size_t k = 0; k < 5; ++k) s += x[i * 5 + k] * p.weights[j * 5 + k];
        CHECK(y[i * 4 + j] == Approx(s).margin(1e-6));
      }
  }
  SECTION("inner dimension mismatch") {
    LayerParams<double> p;
    p.weights = Tensor<double>({2, 3});
    p.bias = Tensor<double>({2});
    CHECK_THROWS_AS(dense(Tensor<double>({1, 4}), p), ShapeError);
  }
}

TEST_CASE("dropout") {
  Rng rng(42);
  const Tensor<double> x({100000}, 1.0);
  CHECK(dropout(x, 0.0, Mode::train, rng).data == x.data);
  CHECK(dropout(x, 0.0, Mode::infer, rng).data == x.data);
  CHECK(dropout(x, 0.7, Mode::infer, rng).data == x.data);
  const auto y = dropout(x, 0.5, Mode::train, rng);
  const double mean = std::accumulate(y.data.begin(), y.data.end(), 0.0) / y.size();
  CHECK(mean >= 0.98);
  CHECK(mean <= 1.02);
  for (double v : y.data) CHECK((v == 0.0 || v == 2.0));
  CHECK_THROWS_AS(dropout(x, 1.0, Mode::train, rng), ConfigError);
  CHECK_THROWS_AS(dropout(x, -0.1, Mode::train, rng), ConfigError);
}

TEST_CASE("adam") {
  SECTION("zero gradient") {
    Tensor<double> w({3}, {1, -2, 3});
    const auto before = w.data;
    auto s = make_adam_state(w);
    adam_step(w, Tensor<double>({3}), s);
    CHECK(w.data == before);
    CHECK(s.t == 1);
  }
  SECTION("first step is lr times sign") {
    for (double g : {0.3, -7.0, 1e-3}) {
      Tensor<double> w({1}, {0.5});
      auto s = make_adam_state(w, 1e-4);
      adam_step(w, Tensor<double>({1}, {g}), s);
      const double expected = 0.5 - 1e-4 * (g > 0 ? 1 : -1);
      CHECK(std::abs(w[0] - expected) <= 1e-4 * 1e-3);
    }
  }
  SECTION("w squared descends") {
    Tensor<double> w({1}, {1.0});
    auto s = make_adam_state(w, 0.1);
    double prev = w[0];
    for (int i = 0; i < 3; ++i) {
      adam_step(w, Tensor<double>({1}, {2 * w[0]}), s);
      CHECK(w[0] < prev);
      prev = w[0];
    }
    for (double v : s.v.data) CHECK(v >= 0);
  }
  SECTION("shape mismatch") {
    Tensor<double> w({2});
    auto s = make_adam_state(w);
    CHECK_THROWS_AS(adam_step(w, Tensor<double>({3}), s), ShapeError);
  }
}

TEST_CASE("gradient check of a linear layer with squared-norm loss") {
  Rng rng(4);
  Network<double> net;
  net.layers.push_back(make_dense<double>(5, 3, rng));
  const auto x = checks::random_tensor({2, 5}, rng);
  LossHead head = [](const Tensor<double>& out) {
    double l = 0;
    for (double v : out.data) l += 0.5 * v * v;
    return std::pair{l, out};
  };
  CHECK(gradient_check(net, x, head).max_rel_error < 1e-7);
}

TEST_CASE("gradient check of elu straddling zero") {
  Network<double> net;
  net.layers.push_back(make_activation<double>(LayerKind::elu));
  Tensor<double> x({1, 8}, {-1.3, -0.5, -0.2, -0.05, 0.05, 0.2, 0.7, 1.9});
  LossHead head = [](const Tensor<double>& out) {
    double l = 0;
    Tensor<double> g(out.shape);
    for (std::size_t i = 0; i < out.size(); ++i) {
      l += (i + 1.0) * out[i] * out[i];
      g[i] = 2 * (i + 1.0) * out[i];
    }
    return std::pair{l, g};
  };
  CHECK(gradient_check(net, x, head).max_rel_error < 1e-5);
}

TEST_CASE("gradient check of a non-finite loss is rejected") {
  Rng rng(4);
  Network<double> net;
  net.layers.push_back(make_dense<double>(2, 2, rng));
  LossHead head = [](const Tensor<double>& out) {
    return std::pair{std::numeric_limits<double>::quiet_NaN(), Tensor<double>(out.shape)};
  };
  CHECK_THROWS_AS(gradient_check(net, Tensor<double>({1, 2}, 1.0), head), NumericError);
}

TEST_CASE("every layer passes the gradient check over 20 seeds") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (const auto& e : checks::isolated_layer_gradchecks(seed)) {
      INFO("seed " << seed << " " << e.name);
      CHECK(e.error < 1e-4);
    }
  }
}

TEST_CASE("the miniature stack passes the gradient check over 20 seeds") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto e = checks::stack_gradcheck(seed);
    INFO("seed " << seed << " worst " << e.name);
    CHECK(e.error < 1e-4);
  }
}

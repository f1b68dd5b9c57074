#pragma once

// Twin convolutional network over covariance inputs, trained with the
// contrastive loss. Both members of a pair run through one parameter store
// (one Network); a training batch of B pairs is a single forward pass over
// 2B inputs, so batch normalization sees both branches jointly.

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sbci/decomposition.hpp"
#include "sbci/nn/adam.hpp"
#include "sbci/nn/checkpoint.hpp"
#include "sbci/nn/network.hpp"

namespace sbci {

/// Layer sizes of one branch. Defaults are the 22-channel configuration:
/// conv 16@3x3, conv 32@3x3 (each + batchnorm + ELU), dense 512 + ReLU +
/// dropout 0.5, dense 512 + ReLU.
struct ArchSpec {
  std::size_t input_size = 22;
  std::size_t conv1_channels = 16;
  std::size_t conv2_channels = 32;
  std::size_t kernel = 3;
  std::size_t padding = 0;
  std::size_t fc1_units = 512;
  std::size_t fc2_units = 512;
  double dropout = 0.5;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.99;

  std::size_t conv_output_size() const {
    const std::size_t once = input_size + 2 * padding - kernel + 1;
    return once + 2 * padding - kernel + 1;
  }
  std::size_t flatten_size() const {
    const auto s = conv_output_size();
    return conv2_channels * s * s;
  }
  std::size_t embedding_size() const { return fc2_units; }

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (kernel < 1) v.push_back("arch.kernel must be >= 1");
    if (input_size + 2 * padding < 2 * kernel - 1)
      v.push_back("arch.input_size too small for two convolutions");
    if (!conv1_channels || !conv2_channels || !fc1_units || !fc2_units)
      v.push_back("arch layer widths must be positive");
    if (!(dropout >= 0 && dropout < 1)) v.push_back("arch.dropout must be in [0, 1)");
    if (!(bn_momentum >= 0 && bn_momentum < 1)) v.push_back("arch.bn_momentum must be in [0, 1)");
    if (!(bn_epsilon > 0)) v.push_back("arch.bn_epsilon must be positive");
    return v;
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ArchSpec, input_size, conv1_channels, conv2_channels,
                                                kernel, padding, fc1_units, fc2_units, dropout,
                                                bn_epsilon, bn_momentum)

template <typename T>
nn::Network<T> build_branch(const ArchSpec& a, Rng& rng) {
  using namespace nn;
  Network<T> net;
  const T eps = static_cast<T>(a.bn_epsilon), mom = static_cast<T>(a.bn_momentum);
  net.layers.push_back(make_conv2d<T>(1, a.conv1_channels, a.kernel, a.padding, rng));
  net.layers.push_back(make_batchnorm<T>(a.conv1_channels, eps, mom));
  net.layers.push_back(make_activation<T>(LayerKind::elu));
  net.layers.push_back(make_conv2d<T>(a.conv1_channels, a.conv2_channels, a.kernel, a.padding, rng));
  net.layers.push_back(make_batchnorm<T>(a.conv2_channels, eps, mom));
  net.layers.push_back(make_activation<T>(LayerKind::elu));
  net.layers.push_back(make_activation<T>(LayerKind::flatten));
  net.layers.push_back(make_dense<T>(a.flatten_size(), a.fc1_units, rng));
  net.layers.push_back(make_activation<T>(LayerKind::relu));
  net.layers.push_back(make_dropout<T>(a.dropout));
  net.layers.push_back(make_dense<T>(a.fc1_units, a.fc2_units, rng));
  net.layers.push_back(make_activation<T>(LayerKind::relu));
  return net;
}

template <typename T>
struct SiameseModel {
  ArchSpec arch;
  nn::Network<T> net;  // the single shared parameter store
  double margin = 0.5;
};

template <typename T = float>
SiameseModel<T> make_siamese(const ArchSpec& arch, double margin, std::uint64_t seed) {
  if (const auto v = arch.violations(); !v.empty()) throw ConfigError(v.front());
  if (!(margin > 0)) throw ConfigError("margin must be positive");
  Rng rng(seed);
  return {arch, build_branch<T>(arch, rng), margin};
}

template <typename T>
io::Bytes save_model(const SiameseModel<T>& m) {
  return nn::save_checkpoint(m.net, nlohmann::json{{"arch", m.arch}, {"margin", m.margin}});
}

template <typename T = float>
SiameseModel<T> load_model(std::span<const std::uint8_t> bytes) {
  const auto desc = nn::checkpoint_descriptor(bytes);
  SiameseModel<T> m;
  try {
    m.arch = desc.at("extra").at("arch").get<ArchSpec>();
    m.margin = desc.at("extra").at("margin").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model checkpoint lacks a twin-network descriptor: ") + e.what());
  }
  Rng rng(0);
  m.net = build_branch<T>(m.arch, rng);
  nn::load_checkpoint(bytes, m.net);
  return m;
}

// ------------------------------------------------------------------ loss

struct LossValue {
  double loss;
  double grad;  // d loss / d distance
};

/// w * [(1 - y) d^2 / 2 + y max(0, m - d)^2 / 2], y = 0 for similar pairs.
inline LossValue contrastive_loss(double d, int y, double margin, double weight = 1.0) {
  if (y == kSimilar) return {weight * 0.5 * d * d, weight * d};
  const double gap = std::max(0.0, margin - d);
  return {weight * 0.5 * gap * gap, -weight * gap};
}

// ------------------------------------------------------------- inference

template <typename T>
nn::Tensor<T> to_input(std::span<const CovarianceFeature* const> zs, std::size_t size) {
  nn::Tensor<T> x({zs.size(), 1, size, size});
  const std::size_t plane = size * size;
  for (std::size_t i = 0; i < zs.size(); ++i) {
    const auto& m = zs[i]->matrix;
    if (static_cast<std::size_t>(m.rows()) != size || static_cast<std::size_t>(m.cols()) != size)
      throw ShapeError("network expects " + std::to_string(size) + "x" + std::to_string(size) +
                       " covariance input, got " + std::to_string(m.rows()) + "x" +
                       std::to_string(m.cols()));
    for (std::size_t k = 0; k < plane; ++k) x[i * plane + k] = static_cast<T>(m.data()[k]);
  }
  return x;
}

using Embedding = std::vector<double>;

/// Infer-mode embeddings for many inputs, evaluated in chunks.
template <typename T>
std::vector<Embedding> embed_all(const SiameseModel<T>& model,
                                 std::span<const CovarianceFeature* const> zs,
                                 std::size_t chunk = 256) {
  std::vector<Embedding> out;
  out.reserve(zs.size());
  for (std::size_t start = 0; start < zs.size(); start += chunk) {
    const auto part = zs.subspan(start, std::min(chunk, zs.size() - start));
    const auto y = model.net.infer(to_input<T>(part, model.arch.input_size));
    const std::size_t dim = y.dim(1);
    for (std::size_t i = 0; i < part.size(); ++i)
      out.emplace_back(y.data.begin() + i * dim, y.data.begin() + (i + 1) * dim);
  }
  return out;
}

template <typename T>
std::vector<Embedding> embed_all(const SiameseModel<T>& model, std::span<const CovarianceFeature> zs) {
  std::vector<const CovarianceFeature*> ptrs;
  for (const auto& z : zs) ptrs.push_back(&z);
  return embed_all(model, std::span<const CovarianceFeature* const>(ptrs));
}

/// Embedding of one input. Train mode needs a batch, so it embeds the
/// input twice as a batch of two and returns the first row.
template <typename T>
Embedding embed(SiameseModel<T>& model, const CovarianceFeature& z, nn::Mode mode = nn::Mode::infer,
                Rng* rng = nullptr) {
  const CovarianceFeature* one[] = {&z};
  if (mode == nn::Mode::infer) return embed_all(std::as_const(model), std::span<const CovarianceFeature* const>(one)).front();
  const CovarianceFeature* two[] = {&z, &z};
  Rng local(0);
  const auto y = model.net.forward(to_input<T>(two, model.arch.input_size), mode, rng ? *rng : local);
  model.net.clear_cache();
  return Embedding(y.data.begin(), y.data.begin() + y.dim(1));
}

inline double euclidean(const Embedding& a, const Embedding& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

template <typename T>
double distance(const SiameseModel<T>& model, const CovarianceFeature& z1, const CovarianceFeature& z2) {
  const CovarianceFeature* zs[] = {&z1, &z2};
  const auto e = embed_all(model, std::span<const CovarianceFeature* const>(zs));
  return euclidean(e[0], e[1]);
}

enum class PairVerdict { same, different };

/// same iff d < tau (a distance exactly at tau is "different").
inline PairVerdict verdict(double d, double tau) { return d < tau ? PairVerdict::same : PairVerdict::different; }

template <typename T>
PairVerdict predict_pair(const SiameseModel<T>& model, const CovarianceFeature& z1,
                         const CovarianceFeature& z2, double tau) {
  return verdict(distance(model, z1, z2), tau);
}

/// Threshold maximizing pair accuracy; candidates are midpoints between
/// consecutive sorted distances. Ties go to the smaller threshold.
inline double calibrate_threshold(std::span<const double> distances, std::span<const int> labels) {
  std::vector<std::size_t> order(distances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return distances[a] < distances[b]; });
  // tau below everything: every pair predicted different.
  long correct = static_cast<long>(std::count(labels.begin(), labels.end(), kDissimilar));
  long best = correct;
  double best_tau = distances.empty() ? 0.0 : distances[order.front()] * 0.5;
  for (std::size_t i = 0; i < order.size(); ++i) {
    correct += labels[order[i]] == kSimilar ? 1 : -1;
    const bool last = i + 1 == order.size();
    if (!last && distances[order[i + 1]] == distances[order[i]]) continue;
    if (correct > best) {
      best = correct;
      const double hi = last ? distances[order[i]] * 1.5 + 1e-12 : distances[order[i + 1]];
      best_tau = 0.5 * (distances[order[i]] + hi);
    }
  }
  return best_tau;
}

// -------------------------------------------------------------- training

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 25;
  double lr = 1e-4;
  double margin = 0.5;
  std::uint64_t seed = 7;
  std::optional<double> threshold;       // defaults to margin / 2
  std::size_t pair_subsample = 0;        // pairs per epoch, 0 = all
  double validation_fraction = 0.0;      // trials held out per superset
  bool calibrate_threshold = false;
  std::size_t reference_cap = 0;         // reference trials per superset, 0 = all

  double tau() const { return threshold.value_or(margin / 2.0); }

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (batch_size < 2) v.push_back("train.batch_size must be >= 2");
    if (epochs < 1) v.push_back("train.epochs must be >= 1");
    if (!(lr >= 0) || !std::isfinite(lr)) v.push_back("train.lr must be a finite value >= 0");
    if (!(margin > 0)) v.push_back("train.margin must be positive");
    if (!(tau() > 0 && tau() < margin)) v.push_back("train.threshold must satisfy 0 < tau < margin");
    if (!(validation_fraction >= 0 && validation_fraction < 1))
      v.push_back("train.validation_fraction must be in [0, 1)");
    return v;
  }

  void validate() const {
    const auto v = violations();
    if (v.empty()) return;
    std::string msg;
    for (const auto& s : v) msg += (msg.empty() ? "" : "; ") + s;
    throw ConfigError(msg);
  }
};

struct EpochLog {
  std::size_t epoch;
  double mean_loss;
  double pair_accuracy;
  std::string split;  // "val" or "train"
};

inline std::string format_epoch_log(const EpochLog& e) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "epoch=%zu loss=%.9g pair_acc=%.6f split=%s", e.epoch, e.mean_loss,
                e.pair_accuracy, e.split.c_str());
  return buf;
}

struct TrainResult {
  std::vector<EpochLog> history;
  double tau = 0;
};

/// Weighted contrastive loss of one batch of pairs, averaged over the
/// batch, with gradients accumulated into the network. Returns the sum of
/// the per-pair weighted losses.
template <typename T>
double accumulate_pair_gradients(SiameseModel<T>& model, const SupersetSplit& split,
                                 std::span<const Pair> batch, nn::Mode mode, Rng& rng) {
  const std::size_t b = batch.size();
  std::vector<const CovarianceFeature*> zs(2 * b);
  for (std::size_t i = 0; i < b; ++i) {
    zs[i] = &split.member(batch[i].first);
    zs[b + i] = &split.member(batch[i].second);
  }
  const auto out = model.net.forward(to_input<T>(zs, model.arch.input_size), mode, rng);
  const std::size_t dim = out.dim(1);
  nn::Tensor<T> grad(out.shape);
  double total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const T* e1 = out.data.data() + i * dim;
    const T* e2 = out.data.data() + (b + i) * dim;
    double sq = 0;
    for (std::size_t k = 0; k < dim; ++k) sq += double(e1[k] - e2[k]) * double(e1[k] - e2[k]);
    const double d = std::sqrt(sq);
    const auto lv = contrastive_loss(d, batch[i].y, model.margin, batch[i].weight);
    total += lv.loss;
    if (d > 0) {
      const double scale = lv.grad / (d * static_cast<double>(b));
      for (std::size_t k = 0; k < dim; ++k) {
        const T g = static_cast<T>(scale * double(e1[k] - e2[k]));
        grad[i * dim + k] = g;
        grad[(b + i) * dim + k] = -g;
      }
    }
  }
  model.net.backward(grad);
  return total;
}

/// Fraction of pairs whose thresholded distance matches the label.
template <typename T>
double pair_accuracy(const SiameseModel<T>& model, const SupersetSplit& split, const PairBatch& pairs,
                     double tau, std::vector<double>* distances_out = nullptr) {
  if (pairs.pairs.empty()) return 0.0;
  std::vector<const CovarianceFeature*> members(split.size());
  for (std::size_t i = 0; i < split.size(); ++i) members[i] = &split.member(i);
  const auto emb = embed_all(model, std::span<const CovarianceFeature* const>(members));
  std::size_t correct = 0;
  for (const auto& p : pairs.pairs) {
    const double d = euclidean(emb[p.first], emb[p.second]);
    if (distances_out) distances_out->push_back(d);
    const bool same = verdict(d, tau) == PairVerdict::same;
    correct += same == (p.y == kSimilar);
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.pairs.size());
}

/// Adam on the weighted contrastive loss. Each epoch draws the configured
/// pair subsample (or all pairs), shuffles, and walks it in batches.
template <typename T>
TrainResult train(SiameseModel<T>& model, const SupersetSplit& split, const PairBatch& pairs,
                  const TrainConfig& cfg, const SupersetSplit* val_split = nullptr,
                  const PairBatch* val_pairs = nullptr, std::ostream* log = nullptr) {
  cfg.validate();
  if (pairs.pairs.empty()) throw DegenerateInputError("no training pairs");
  model.margin = cfg.margin;
  Rng rng(cfg.seed);
  nn::Adam<T> adam(model.net, cfg.lr);
  TrainResult result;
  result.tau = cfg.tau();

  // Pair accuracy is tracked on validation pairs when present, otherwise
  // on a fixed sample of training pairs.
  const bool have_val = val_split && val_pairs && !val_pairs->pairs.empty();
  Rng monitor_rng(mix_seed(cfg.seed, 0xacc));
  const PairBatch monitor = have_val ? *val_pairs : subsample_pairs(pairs, 4000, monitor_rng);
  const SupersetSplit& monitor_split = have_val ? *val_split : split;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    PairBatch work = subsample_pairs(pairs, cfg.pair_subsample, rng);
    shuffle(work.pairs, rng);
    double loss_sum = 0;
    for (std::size_t start = 0, bi = 0; start < work.pairs.size(); start += cfg.batch_size, ++bi) {
      const auto batch = std::span<const Pair>(work.pairs).subspan(
          start, std::min(cfg.batch_size, work.pairs.size() - start));
      model.net.zero_grad();
      const double batch_loss = accumulate_pair_gradients(model, split, batch, nn::Mode::train, rng);
      if (!std::isfinite(batch_loss))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(bi));
      adam.step(model.net);
      loss_sum += batch_loss;
    }
    model.net.clear_cache();
    EpochLog e{epoch, loss_sum / static_cast<double>(work.pairs.size()),
               pair_accuracy(model, monitor_split, monitor, result.tau), have_val ? "val" : "train"};
    if (log) *log << format_epoch_log(e) << '\n';
    result.history.push_back(std::move(e));
  }

  if (cfg.calibrate_threshold) {
    std::vector<double> d;
    pair_accuracy(model, monitor_split, monitor, result.tau, &d);
    std::vector<int> y;
    for (const auto& p : monitor.pairs) y.push_back(p.y);
    result.tau = calibrate_threshold(d, y);
  }
  return result;
}

}  // namespace sbci

#pragma once

// Multi-class classification with one twin network per coding-matrix
// column: training, per-column voting against retained reference trials,
// codeword decoding, kappa and stratified cross-validation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>
#include <vector>

#include "sbci/data/split.hpp"
#include "sbci/decomposition.hpp"
#include "sbci/siamese.hpp"

namespace sbci {

using Model = SiameseModel<float>;

struct ColumnClassifier {
  Model model;
  // Reference trials of superset 0 / 1, as indices into Ensemble::references.
  std::vector<std::size_t> ref0;
  std::vector<std::size_t> ref1;
  double tau = 0.25;
  // Infer-mode embeddings of the references, filled by prepare().
  std::vector<Embedding> emb0;
  std::vector<Embedding> emb1;

  void prepare(std::span<const CovarianceFeature> references) {
    auto embed_idx = [&](const std::vector<std::size_t>& idx) {
      std::vector<const CovarianceFeature*> ptrs;
      for (auto i : idx) {
        if (i >= references.size())
          throw FormatError("reference index " + std::to_string(i) + " outside the reference set");
        ptrs.push_back(&references[i]);
      }
      return embed_all(model, std::span<const CovarianceFeature* const>(ptrs));
    };
    emb0 = embed_idx(ref0);
    emb1 = embed_idx(ref1);
  }
};

struct Ensemble {
  CodingMatrix matrix;
  std::vector<CovarianceFeature> references;  // the training trials
  std::vector<ColumnClassifier> classifiers;
};

struct ColumnTraining {
  TrainResult result;
  std::string log;  // one format_epoch_log line per epoch
  double seconds = 0;  // wall time, informational only
};

namespace detail {

inline std::vector<std::size_t> cap_references(std::vector<std::size_t> v, std::size_t cap, Rng& rng) {
  if (cap == 0 || v.size() <= cap) return v;
  shuffle(v, rng);
  v.resize(cap);
  std::sort(v.begin(), v.end());
  return v;
}

/// Moves a seeded `fraction` of each superset into a validation split.
inline SupersetSplit hold_out(SupersetSplit& split, double fraction, Rng& rng) {
  SupersetSplit val;
  val.column = split.column;
  auto take = [&](std::vector<CovarianceFeature>& from, std::vector<CovarianceFeature>& to) {
    const auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(from.size())));
    if (n == 0 || n >= from.size()) return;
    shuffle(from, rng);
    to.assign(from.end() - static_cast<std::ptrdiff_t>(n), from.end());
    from.resize(from.size() - n);
  };
  take(split.s0, val.s0);
  take(split.s1, val.s1);
  return val;
}

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr error;
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard lock(mu);
          if (next >= n || error) return;
          i = next++;
        }
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  pool.clear();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

/// Trains the classifier of column j. Seeds are derived from cfg.seed and
/// j, so the result does not depend on which thread runs it.
inline ColumnClassifier train_column(std::span<const CovarianceFeature> trials, const CodingMatrix& m,
                                     std::size_t column, const TrainConfig& cfg, const ArchSpec& arch,
                                     ColumnTraining* info = nullptr) {
  SupersetSplit split = form_supersets(trials, m, column);
  Rng split_rng(mix_seed(cfg.seed, 3 * column + 2));
  std::vector<std::size_t> ref0, ref1;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const auto c = m.code(trials[i].label, column);
    if (c == kCodeZero) ref0.push_back(i);
    else if (c == kCodeOne) ref1.push_back(i);
  }
  SupersetSplit val;
  PairBatch val_pairs;
  if (cfg.validation_fraction > 0) {
    val = detail::hold_out(split, cfg.validation_fraction, split_rng);
    if (val.size() >= 2) val_pairs = generate_pairs(val);
  }
  const PairBatch pairs = generate_pairs(split);

  ColumnClassifier c;
  c.model = make_siamese<float>(arch, cfg.margin, mix_seed(cfg.seed, 3 * column));
  TrainConfig col_cfg = cfg;
  col_cfg.seed = mix_seed(cfg.seed, 3 * column + 1);
  std::ostringstream log;
  const bool use_val = !val_pairs.pairs.empty();
  auto result = train(c.model, split, pairs, col_cfg, use_val ? &val : nullptr,
                      use_val ? &val_pairs : nullptr, &log);
  c.tau = result.tau;
  c.ref0 = detail::cap_references(std::move(ref0), cfg.reference_cap, split_rng);
  c.ref1 = detail::cap_references(std::move(ref1), cfg.reference_cap, split_rng);
  c.prepare(trials);
  if (info) *info = {std::move(result), log.str()};
  return c;
}

inline Ensemble train_ensemble(std::span<const CovarianceFeature> trials, const CodingMatrix& m,
                               const TrainConfig& cfg, const ArchSpec& arch = {}, std::size_t threads = 1,
                               std::vector<ColumnTraining>* info = nullptr) {
  cfg.validate();
  std::vector<int> present(m.classes() + 1, 0);
  for (const auto& t : trials) {
    if (t.label < 1 || static_cast<std::size_t>(t.label) > m.classes())
      throw ConfigError("trial label " + std::to_string(t.label) + " outside 1.." +
                        std::to_string(m.classes()));
    present[static_cast<std::size_t>(t.label)] = 1;
  }
  if (std::accumulate(present.begin(), present.end(), 0) < 2)
    throw DegenerateInputError("training needs at least 2 classes");
  Ensemble e;
  e.matrix = m;
  e.references.assign(trials.begin(), trials.end());
  e.classifiers.resize(m.columns());
  std::vector<ColumnTraining> local(m.columns());
  detail::parallel_for(m.columns(), threads, [&](std::size_t j) {
    const auto t0 = std::chrono::steady_clock::now();
    e.classifiers[j] = train_column(trials, m, j, cfg, arch, &local[j]);
    local[j].seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  });
  if (info) *info = std::move(local);
  return e;
}

// ---------------------------------------------------------------- voting

struct ColumnVote {
  int bit = 0;
  std::size_t votes0 = 0;  // pair outcomes attributing the test trial to S0
  std::size_t votes1 = 0;
  double mean_d0 = 0;      // mean distance to the S0 references
  double mean_d1 = 0;
  bool tie = false;        // votes tied; bit decided by mean distance
};

/// Pairs the test embedding with every reference: "same" votes for the
/// reference's superset, "different" for the other one. Majority wins;
/// a tie goes to the superset with the smaller mean distance, then to 0.
inline ColumnVote classifier_vote(const ColumnClassifier& c, const Embedding& test) {
  if (c.emb0.empty() || c.emb1.empty())
    throw DegenerateInputError("classifier needs prepared references on both supersets");
  ColumnVote v;
  auto tally = [&](const std::vector<Embedding>& refs, int superset, double& mean) {
    double sum = 0;
    for (const auto& r : refs) {
      const double d = euclidean(test, r);
      sum += d;
      const bool same = verdict(d, c.tau) == PairVerdict::same;
      const int to = same ? superset : 1 - superset;
      (to == 0 ? v.votes0 : v.votes1) += 1;
    }
    mean = sum / static_cast<double>(refs.size());
  };
  tally(c.emb0, 0, v.mean_d0);
  tally(c.emb1, 1, v.mean_d1);
  if (v.votes1 != v.votes0) {
    v.bit = v.votes1 > v.votes0 ? 1 : 0;
  } else {
    v.tie = true;
    v.bit = v.mean_d1 < v.mean_d0 ? 1 : 0;
  }
  return v;
}

inline ColumnVote classifier_vote(const ColumnClassifier& c, const CovarianceFeature& z) {
  const CovarianceFeature* one[] = {&z};
  return classifier_vote(c, embed_all(c.model, std::span<const CovarianceFeature* const>(one)).front());
}

// -------------------------------------------------------------- decoding

struct Decoded {
  Label label = 1;
  std::vector<double> delta;  // distance of the votes to each class codeword
  bool tie = false;           // several rows share the minimum
};

/// argmin over rows of the L1 distance between vote bits and the row's
/// codeword. By default don't-care entries (2) are skipped; `literal_l1`
/// counts |vote - 2| for them as well.
inline Decoded decode_label(std::span<const int> votes, const CodingMatrix& m, bool literal_l1 = false) {
  if (votes.size() != m.columns())
    throw ShapeError("decode_label: " + std::to_string(votes.size()) + " votes for " +
                     std::to_string(m.columns()) + " columns");
  Decoded d;
  d.delta.assign(m.classes(), 0.0);
  for (std::size_t i = 0; i < m.classes(); ++i)
    for (std::size_t j = 0; j < m.columns(); ++j) {
      const int c = m.at(i, j);
      if (c == kDontCare && !literal_l1) continue;
      d.delta[i] += std::abs(votes[j] - c);
    }
  std::size_t best = 0;
  for (std::size_t i = 1; i < m.classes(); ++i)
    if (d.delta[i] < d.delta[best]) best = i;
  d.label = static_cast<Label>(best + 1);
  d.tie = std::count(d.delta.begin(), d.delta.end(), d.delta[best]) > 1;
  return d;
}

struct VoteRecord {
  std::vector<int> bits;
  std::vector<ColumnVote> columns;
  Decoded decoded;
};

/// Classifies many trials, embedding each column's inputs in batches.
inline std::vector<VoteRecord> classify_all(const Ensemble& e, std::span<const CovarianceFeature> zs,
                                            bool literal_l1 = false) {
  std::vector<VoteRecord> out(zs.size());
  for (const auto& c : e.classifiers) {
    const auto emb = embed_all(c.model, zs);
    for (std::size_t i = 0; i < zs.size(); ++i) {
      const auto v = classifier_vote(c, emb[i]);
      out[i].bits.push_back(v.bit);
      out[i].columns.push_back(v);
    }
  }
  for (auto& r : out) r.decoded = decode_label(r.bits, e.matrix, literal_l1);
  return out;
}

inline VoteRecord classify(const Ensemble& e, const CovarianceFeature& z, bool literal_l1 = false) {
  return classify_all(e, std::span<const CovarianceFeature>(&z, 1), literal_l1).front();
}

// --------------------------------------------------------------- metrics

/// Chance-corrected accuracy (p_s - p_r) / (1 - p_r).
inline double kappa(double p_s, double p_r) {
  if (!(p_s >= 0 && p_s <= 1)) throw ConfigError("kappa: accuracy must be in [0, 1]");
  if (!(p_r >= 0 && p_r < 1)) throw ConfigError("kappa: chance level must be in [0, 1)");
  return (p_s - p_r) / (1.0 - p_r);
}

struct EvalSummary {
  std::size_t n = 0;
  std::size_t correct = 0;
  std::size_t classes = 0;
  double accuracy = 0;
  double chance = 0;  // 1 / K
  double kappa = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true - 1][predicted - 1]
};

inline EvalSummary summarize(std::span<const Label> truth, std::span<const Label> predicted, std::size_t k) {
  if (truth.size() != predicted.size()) throw ShapeError("summarize: label vectors differ in length");
  if (truth.empty()) throw DegenerateInputError("summarize: no labeled trials");
  EvalSummary s;
  s.classes = k;
  s.n = truth.size();
  s.confusion.assign(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 1 || static_cast<std::size_t>(truth[i]) > k || predicted[i] < 1 ||
        static_cast<std::size_t>(predicted[i]) > k)
      throw ConfigError("summarize: label outside 1.." + std::to_string(k));
    s.confusion[truth[i] - 1][predicted[i] - 1] += 1;
    s.correct += truth[i] == predicted[i];
  }
  s.accuracy = static_cast<double>(s.correct) / static_cast<double>(s.n);
  s.chance = 1.0 / static_cast<double>(k);
  s.kappa = kappa(s.accuracy, s.chance);
  return s;
}

// ------------------------------------------------------ cross-validation

struct FoldResult {
  std::size_t n = 0;
  double accuracy = 0;
  double kappa = 0;
};

struct CvResult {
  std::vector<FoldResult> folds;
  double mean_accuracy = 0, std_accuracy = 0;
  double mean_kappa = 0, std_kappa = 0;
  double pooled_accuracy = 0;
};

inline std::pair<double, double> mean_std(std::span<const double> v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
}

/// Stratified k-fold: train on k-1 folds, classify the held-out fold.
inline CvResult kfold_cv(std::span<const CovarianceFeature> trials, std::size_t k, const CodingMatrix& m,
                         const TrainConfig& cfg, const ArchSpec& arch = {}, std::size_t threads = 1,
                         bool literal_l1 = false, std::ostream* log = nullptr) {
  if (k < 2) throw ConfigError("cross-validation needs k >= 2");
  const auto labels = data::labels_of(trials);
  const auto folds = data::stratified_folds(labels, k, cfg.seed);
  CvResult r;
  std::size_t pooled_correct = 0;
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> train_idx;
    for (std::size_t g = 0; g < k; ++g)
      if (g != f) train_idx.insert(train_idx.end(), folds[g].begin(), folds[g].end());
    std::sort(train_idx.begin(), train_idx.end());
    const auto train_set = data::select(trials, std::span<const std::size_t>(train_idx));
    const auto test_set = data::select(trials, std::span<const std::size_t>(folds[f]));
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = mix_seed(cfg.seed, 1000 + f);
    const auto ensemble = train_ensemble(train_set, m, fold_cfg, arch, threads);
    const auto records = classify_all(ensemble, test_set, literal_l1);
    std::vector<Label> truth, pred;
    for (std::size_t i = 0; i < records.size(); ++i) {
      truth.push_back(test_set[i].label);
      pred.push_back(records[i].decoded.label);
    }
    const auto s = summarize(truth, pred, m.classes());
    r.folds.push_back({s.n, s.accuracy, s.kappa});
    pooled_correct += s.correct;
    if (log) *log << "fold=" << f + 1 << " n=" << s.n << " accuracy=" << s.accuracy << " kappa=" << s.kappa << '\n';
  }
  std::vector<double> acc, kap;
  std::size_t total = 0;
  for (const auto& f : r.folds) {
    acc.push_back(f.accuracy);
    kap.push_back(f.kappa);
    total += f.n;
  }
  std::tie(r.mean_accuracy, r.std_accuracy) = mean_std(acc);
  std::tie(r.mean_kappa, r.std_kappa) = mean_std(kap);
  r.pooled_accuracy = static_cast<double>(pooled_correct) / static_cast<double>(total);
  return r;
}

}  // namespace sbci

#pragma once

// Binary decomposition of a K-class problem: coding matrices over {0,1,2},
// superset routing per column, exhaustive pair generation and class
// weights for the imbalanced pair labels.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "sbci/rng.hpp"
#include "sbci/types.hpp"

namespace sbci {

enum class Scheme { ovr, ovo, custom };

inline const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::ovr: return "ovr";
    case Scheme::ovo: return "ovo";
    case Scheme::custom: return "custom";
  }
  return "?";
}

inline constexpr std::uint8_t kCodeZero = 0;
inline constexpr std::uint8_t kCodeOne = 1;
inline constexpr std::uint8_t kDontCare = 2;

/// K x L code table. Row i is the codeword of class i+1, column j defines
/// binary problem j: classes coded 0 form superset S0, coded 1 form S1,
/// coded 2 sit out.
class CodingMatrix {
 public:
  CodingMatrix() = default;

  CodingMatrix(std::size_t k, std::size_t l, std::vector<std::uint8_t> entries,
               Scheme scheme = Scheme::custom)
      : k_(k), l_(l), entries_(std::move(entries)), scheme_(scheme) {
    const auto v = violations(k_, l_, entries_);
    if (!v.empty()) {
      std::string msg = "invalid coding matrix:";
      for (const auto& s : v) msg += " " + s + ";";
      throw ConfigError(msg);
    }
  }

  std::size_t classes() const { return k_; }
  std::size_t columns() const { return l_; }
  Scheme scheme() const { return scheme_; }
  const std::vector<std::uint8_t>& entries() const { return entries_; }

  /// Zero-based row and column.
  std::uint8_t at(std::size_t row, std::size_t col) const { return entries_.at(row * l_ + col); }

  /// Code of a 1-based class label in column j.
  std::uint8_t code(Label label, std::size_t col) const {
    if (label < 1 || static_cast<std::size_t>(label) > k_)
      throw ConfigError("label " + std::to_string(label) + " outside 1.." + std::to_string(k_));
    return at(static_cast<std::size_t>(label - 1), col);
  }

  bool operator==(const CodingMatrix& o) const {
    return k_ == o.k_ && l_ == o.l_ && entries_ == o.entries_;
  }

  /// Every violated invariant, empty when the matrix is usable.
  static std::vector<std::string> violations(std::size_t k, std::size_t l,
                                             const std::vector<std::uint8_t>& e) {
    std::vector<std::string> out;
    if (k < 2) out.push_back("needs at least 2 classes, got " + std::to_string(k));
    if (l < 1) out.push_back("needs at least 1 column");
    if (e.size() != k * l) {
      out.push_back("has " + std::to_string(e.size()) + " entries for a " + std::to_string(k) +
                    "x" + std::to_string(l) + " shape");
      return out;
    }
    for (std::size_t i = 0; i < e.size(); ++i)
      if (e[i] > kDontCare)
        out.push_back("entry (" + std::to_string(i / l + 1) + "," + std::to_string(i % l + 1) +
                      ") is " + std::to_string(e[i]) + ", not 0/1/2");
    for (std::size_t j = 0; j < l; ++j) {
      bool zero = false, one = false;
      for (std::size_t i = 0; i < k; ++i) {
        zero |= e[i * l + j] == kCodeZero;
        one |= e[i * l + j] == kCodeOne;
      }
      if (!zero || !one)
        out.push_back("column " + std::to_string(j + 1) + " lacks a " + (zero ? "1" : "0"));
    }
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = a + 1; b < k; ++b) {
        bool separated = false;
        for (std::size_t j = 0; j < l && !separated; ++j) {
          const auto x = e[a * l + j], y = e[b * l + j];
          separated = x != kDontCare && y != kDontCare && x != y;
        }
        if (!separated)
          out.push_back("rows " + std::to_string(a + 1) + " and " + std::to_string(b + 1) +
                        " are never separated by any column");
      }
    return out;
  }

 private:
  std::size_t k_ = 0, l_ = 0;
  std::vector<std::uint8_t> entries_;
  Scheme scheme_ = Scheme::custom;
};

/// OVR: identity pattern. OVO: one column per class pair (a, b), a < b, in
/// lexicographic order, with a coded 1, b coded 0 and the rest 2.
inline CodingMatrix build_coding_matrix(Scheme scheme, int k) {
  if (k < 2) throw ConfigError("coding matrix needs k >= 2, got " + std::to_string(k));
  const auto K = static_cast<std::size_t>(k);
  if (scheme == Scheme::ovr) {
    std::vector<std::uint8_t> e(K * K, kCodeZero);
    for (std::size_t i = 0; i < K; ++i) e[i * K + i] = kCodeOne;
    return {K, K, std::move(e), Scheme::ovr};
  }
  if (scheme == Scheme::ovo) {
    const std::size_t L = K * (K - 1) / 2;
    std::vector<std::uint8_t> e(K * L, kDontCare);
    std::size_t j = 0;
    for (std::size_t a = 0; a < K; ++a)
      for (std::size_t b = a + 1; b < K; ++b, ++j) {
        e[a * L + j] = kCodeOne;
        e[b * L + j] = kCodeZero;
      }
    return {K, L, std::move(e), Scheme::ovo};
  }
  throw ConfigError("custom coding matrices are loaded, not built");
}

/// Whitespace-separated rows of 0/1/2, one class per line. Blank lines and
/// lines starting with '#' are ignored.
inline CodingMatrix parse_coding_matrix(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<int>> rows;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::vector<int> row;
    std::string tok;
    while (ls >> tok) {
      if (tok.size() != 1 || tok[0] < '0' || tok[0] > '9')
        throw FormatError("coding matrix: bad entry '" + tok + "' on row " +
                          std::to_string(rows.size() + 1));
      row.push_back(tok[0] - '0');
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError("coding matrix: no rows");
  const std::size_t l = rows.front().size();
  std::vector<std::uint8_t> e;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != l)
      throw FormatError("coding matrix: row " + std::to_string(i + 1) + " has " +
                        std::to_string(rows[i].size()) + " entries, row 1 has " + std::to_string(l));
    for (int v : rows[i]) e.push_back(static_cast<std::uint8_t>(v));
  }
  return {rows.size(), l, std::move(e), Scheme::custom};
}

inline CodingMatrix load_coding_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open coding matrix file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_coding_matrix(ss.str());
}

inline std::string format_coding_matrix(const CodingMatrix& m) {
  std::string out;
  for (std::size_t i = 0; i < m.classes(); ++i) {
    for (std::size_t j = 0; j < m.columns(); ++j) {
      if (j) out += ' ';
      out += static_cast<char>('0' + m.at(i, j));
    }
    out += '\n';
  }
  return out;
}

// ------------------------------------------------------------- supersets

struct SupersetSplit {
  std::vector<CovarianceFeature> s0;
  std::vector<CovarianceFeature> s1;
  std::size_t column = 0;

  std::size_t size() const { return s0.size() + s1.size(); }
  /// Members indexed S0 first, then S1.
  const CovarianceFeature& member(std::size_t i) const {
    return i < s0.size() ? s0[i] : s1[i - s0.size()];
  }
  int superset_of(std::size_t i) const { return i < s0.size() ? 0 : 1; }
};

inline SupersetSplit form_supersets(std::span<const CovarianceFeature> trials, const CodingMatrix& m,
                                    std::size_t column) {
  if (column >= m.columns())
    throw ConfigError("column " + std::to_string(column + 1) + " out of range");
  SupersetSplit s;
  s.column = column;
  for (const auto& t : trials) {
    switch (m.code(t.label, column)) {
      case kCodeZero: s.s0.push_back(t); break;
      case kCodeOne: s.s1.push_back(t); break;
      default: break;
    }
  }
  if (s.s0.empty() || s.s1.empty())
    throw DegenerateInputError("column " + std::to_string(column + 1) + ": superset S" +
                               (s.s0.empty() ? "0" : "1") + " is empty");
  return s;
}

// ----------------------------------------------------------------- pairs

/// Pair labels. Similar pairs (both members in the same superset) carry 0,
/// matching the attracting term of the contrastive loss.
inline constexpr int kSimilar = 0;
inline constexpr int kDissimilar = 1;

struct Pair {
  std::size_t first;   // index into SupersetSplit::member
  std::size_t second;
  int y;
  double weight = 1.0;
};

struct PairBatch {
  std::vector<Pair> pairs;

  std::size_t count(int y) const {
    return static_cast<std::size_t>(
        std::count_if(pairs.begin(), pairs.end(), [y](const Pair& p) { return p.y == y; }));
  }
  double weighted_count(int y) const {
    double s = 0;
    for (const auto& p : pairs)
      if (p.y == y) s += p.weight;
    return s;
  }
};

/// weight(y) = total / (2 * count(y)), so both labels carry equal total weight.
inline PairBatch class_weights(PairBatch batch) {
  const auto n0 = batch.count(kSimilar), n1 = batch.count(kDissimilar);
  if (n0 == 0 || n1 == 0)
    throw DegenerateInputError("class weights need both similar and dissimilar pairs (got " +
                               std::to_string(n0) + " and " + std::to_string(n1) + ")");
  const double total = static_cast<double>(batch.pairs.size());
  const double w0 = total / (2.0 * static_cast<double>(n0));
  const double w1 = total / (2.0 * static_cast<double>(n1));
  for (auto& p : batch.pairs) p.weight = p.y == kSimilar ? w0 : w1;
  return batch;
}

/// All unordered pairs without self-pairs. Weights are left at 1 when only
/// one label occurs (e.g. |S0| = |S1| = 1), otherwise set by class_weights.
inline PairBatch generate_pairs(const SupersetSplit& split) {
  const std::size_t n = split.size();
  if (n < 2) throw DegenerateInputError("pair generation needs at least 2 trials");
  PairBatch b;
  b.pairs.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      b.pairs.push_back({i, j, split.superset_of(i) == split.superset_of(j) ? kSimilar : kDissimilar, 1.0});
  if (b.count(kSimilar) > 0 && b.count(kDissimilar) > 0) return class_weights(std::move(b));
  return b;
}

/// Seeded uniform subsample without replacement, weights recomputed on the
/// subsample. Returns the batch unchanged when `n` covers it.
inline PairBatch subsample_pairs(const PairBatch& batch, std::size_t n, Rng& rng) {
  if (n == 0 || n >= batch.pairs.size()) return batch;
  std::vector<std::size_t> idx(batch.pairs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < n; ++i) {  // partial Fisher-Yates
    const auto j = i + static_cast<std::size_t>(uniform_index(rng, idx.size() - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  PairBatch out;
  out.pairs.reserve(n);
  for (auto i : idx) out.pairs.push_back(batch.pairs[i]);
  if (out.count(kSimilar) > 0 && out.count(kDissimilar) > 0) return class_weights(std::move(out));
  return out;
}

}  // namespace sbci

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include "sbci/rng.hpp"
#include "sbci/types.hpp"

namespace sbci::data {

using Partition = std::vector<std::vector<std::size_t>>;  // indices into the input

namespace detail {

inline std::map<Label, std::vector<std::size_t>> shuffled_by_class(std::span<const Label> labels, Rng& rng) {
  std::map<Label, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  for (auto& [label, idx] : by_class) shuffle(idx, rng);
  return by_class;
}

}  // namespace detail

/// Per-class proportional split. Each class contributes floor(f * n) to
/// every part; leftover trials go to the parts with the largest fractional
/// remainders (earlier part on ties).
inline Partition stratified_split(std::span<const Label> labels, std::span<const double> fractions,
                                  std::uint64_t seed) {
  if (fractions.empty()) throw ConfigError("split needs at least one fraction");
  double sum = 0;
  for (double f : fractions) {
    if (!(f >= 0)) throw ConfigError("split fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  Rng rng(seed);
  Partition parts(fractions.size());
  for (auto& [label, idx] : detail::shuffled_by_class(labels, rng)) {
    const std::size_t n = idx.size();
    const std::size_t nonzero = static_cast<std::size_t>(std::count_if(fractions.begin(), fractions.end(), [](double f) { return f > 0; }));
    if (n < nonzero)
      throw ConfigError("class " + std::to_string(label) + " has " + std::to_string(n) +
                        " trials, fewer than the " + std::to_string(nonzero) + " partitions");
    std::vector<std::size_t> counts(fractions.size());
    std::vector<double> rem(fractions.size());
    std::size_t used = 0;
    for (std::size_t p = 0; p < fractions.size(); ++p) {
      const double exact = fractions[p] * static_cast<double>(n);
      counts[p] = static_cast<std::size_t>(std::floor(exact + 1e-9));
      rem[p] = exact - static_cast<double>(counts[p]);
      used += counts[p];
    }
    std::vector<std::size_t> order(fractions.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rem[a] > rem[b]; });
    for (std::size_t i = 0; used < n; ++i, ++used) ++counts[order[i % order.size()]];
    std::size_t pos = 0;
    for (std::size_t p = 0; p < fractions.size(); ++p)
      for (std::size_t c = 0; c < counts[p]; ++c) parts[p].push_back(idx[pos++]);
  }
  for (auto& p : parts) std::sort(p.begin(), p.end());
  return parts;
}

/// k stratified folds: each class is shuffled and dealt round-robin.
inline Partition stratified_folds(std::span<const Label> labels, std::size_t k, std::uint64_t seed) {
  if (k < 1) throw ConfigError("fold count must be >= 1");
  Rng rng(seed);
  Partition folds(k);
  for (auto& [label, idx] : detail::shuffled_by_class(labels, rng)) {
    if (idx.size() < k)
      throw ConfigError("class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                        " trials, fewer than " + std::to_string(k) + " folds");
    for (std::size_t i = 0; i < idx.size(); ++i) folds[i % k].push_back(idx[i]);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

template <typename Item>
std::vector<Item> select(std::span<const Item> items, std::span<const std::size_t> idx) {
  std::vector<Item> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(items[i]);
  return out;
}

template <typename Item>
std::vector<Label> labels_of(std::span<const Item> items) {
  std::vector<Label> out;
  out.reserve(items.size());
  for (const auto& t : items) out.push_back(t.label);
  return out;
}

}  // namespace sbci::data

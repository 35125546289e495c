#pragma once

// Rank-based restatement of the ranking rules: pool every similarity,
// sort descending with negatives placed ahead of equal positives, and call
// the item correct when the positives fill the top slots.

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

namespace oracle {

inline bool positives_on_top(const std::vector<double>& pos, const std::vector<double>& neg) {
  std::vector<std::pair<double, int>> pool;  // (sim, 0 = negative, 1 = positive)
  for (double s : pos) pool.emplace_back(s, 1);
  for (double s : neg) pool.emplace_back(s, 0);
  std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t i = 0; i < pos.size(); ++i) {
    if (pool[i].second != 1) return false;
  }
  return true;
}

inline long double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  long double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<long double>(a[i]) * b[i];
    na += static_cast<long double>(a[i]) * a[i];
    nb += static_cast<long double>(b[i]) * b[i];
  }
  return dot / std::sqrt(na * nb);
}

/// Probability that `pos` exchangeable scores all land above `neg` others,
/// by enumerating every ordering of the labels.
inline double chance_all_on_top(int pos, int neg) {
  std::vector<int> labels(pos, 1);
  labels.resize(pos + neg, 0);
  std::sort(labels.begin(), labels.end());
  long good = 0, total = 0;
  do {
    ++total;
    bool ok = true;
    for (int i = 0; i < pos; ++i) ok = ok && labels[i] == 1;
    good += ok ? 1 : 0;
  } while (std::next_permutation(labels.begin(), labels.end()));
  return static_cast<double>(good) / static_cast<double>(total);
}

}  // namespace oracle

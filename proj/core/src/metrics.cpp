#include "dip/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace dip::metrics {

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: scores/labels length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // Tied block [i, j) shares the average 1-based rank.
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        positive_rank_sum += rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) {
    throw std::invalid_argument("auc: undefined for a single-class evaluation set");
  }
  const double np = static_cast<double>(positives);
  const double u = positive_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(negatives));
}

double accuracy(const std::vector<double>& scores, const std::vector<int>& labels, double threshold) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw std::invalid_argument("accuracy: scores/labels length mismatch or empty");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) hits += ((scores[i] > threshold) == (labels[i] == 1));
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

}  // namespace dip::metrics

#pragma once

#include <vector>

namespace dip::metrics {

// Area under the ROC curve via the Mann-Whitney rank statistic, ties counted
// as one half. labels: 1 = positive (fake), 0 = negative (real). Throws
// std::invalid_argument when only one class is present.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Fraction of items where (score > threshold) matches label == 1.
double accuracy(const std::vector<double>& scores, const std::vector<int>& labels, double threshold = 0.5);

}  // namespace dip::metrics

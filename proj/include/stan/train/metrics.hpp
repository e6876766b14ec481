#pragma once

#include <cstdint>
#include <vector>

namespace stan {

struct BinaryCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  void add(bool predicted, bool actual);
  BinaryCounts& operator+=(const BinaryCounts& other);
  // 2TP / (2TP + FP + FN), 0 when the denominator is 0.
  double f1() const;
};

BinaryCounts count(const std::vector<std::uint8_t>& predictions, const std::vector<std::uint8_t>& labels);
double f1(const std::vector<std::uint8_t>& predictions, const std::vector<std::uint8_t>& labels);

struct ClassificationScores {
  std::vector<double> per_class;  // one-vs-rest F1
  double micro = 0.0;             // pooled; equals accuracy for single-label data
  double macro = 0.0;
};

ClassificationScores classification_f1(const std::vector<std::size_t>& predictions,
                                       const std::vector<std::size_t>& labels, std::size_t num_classes);

}  // namespace stan

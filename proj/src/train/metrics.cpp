#include "stan/train/metrics.hpp"

#include <stdexcept>

namespace stan {

void BinaryCounts::add(bool predicted, bool actual) {
  if (predicted && actual) ++tp;
  else if (predicted) ++fp;
  else if (actual) ++fn;
  else ++tn;
}

BinaryCounts& BinaryCounts::operator+=(const BinaryCounts& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  return *this;
}

double BinaryCounts::f1() const {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

BinaryCounts count(const std::vector<std::uint8_t>& predictions, const std::vector<std::uint8_t>& labels) {
  if (predictions.size() != labels.size()) throw std::invalid_argument("f1: predictions and labels differ in length");
  BinaryCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) c.add(predictions[i] != 0, labels[i] != 0);
  return c;
}

double f1(const std::vector<std::uint8_t>& predictions, const std::vector<std::uint8_t>& labels) {
  return count(predictions, labels).f1();
}

ClassificationScores classification_f1(const std::vector<std::size_t>& predictions,
                                       const std::vector<std::size_t>& labels, std::size_t num_classes) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("classification_f1: predictions and labels differ in length");
  }
  std::vector<BinaryCounts> per(num_classes);
  BinaryCounts pooled;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t k = 0; k < num_classes; ++k) {
      per[k].add(predictions[i] == k, labels[i] == k);
    }
  }
  ClassificationScores s;
  for (const auto& c : per) {
    s.per_class.push_back(c.f1());
    s.macro += c.f1();
    pooled += c;
  }
  if (num_classes > 0) s.macro /= static_cast<double>(num_classes);
  s.micro = pooled.f1();
  return s;
}

}  // namespace stan

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace egfi {

/// counts[gold][predicted]. The last class is the negative label; it is left
/// out of micro averaging unless asked for.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes = 5);
  static ConfusionMatrix from_predictions(const std::vector<int>& gold, const std::vector<int>& predicted,
                                          int classes = 5);

  int classes() const { return n_; }
  void add(int gold, int predicted, std::int64_t count = 1);
  std::int64_t at(int gold, int predicted) const { return counts_[index(gold, predicted)]; }
  std::int64_t& at(int gold, int predicted) { return counts_[index(gold, predicted)]; }
  std::int64_t row_sum(int gold) const;
  std::int64_t col_sum(int predicted) const;
  std::int64_t total() const;

 private:
  std::size_t index(int g, int p) const;
  int n_;
  std::vector<std::int64_t> counts_;
};

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t tp = 0, fp = 0, fn = 0;
  /// Set when any of the three ratios had a zero denominator.
  bool undefined = false;
};

/// Precision, recall and F1 from raw counts; zero denominators give 0.
PRF prf_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn);

/// TP/FP/FN pooled over the positive classes (all but the last), or over
/// every class with `include_negative`.
PRF micro_prf(const ConfusionMatrix& cm, bool include_negative = false);
/// One-vs-rest scores for every class, in label order.
std::vector<PRF> per_class_prf(const ConfusionMatrix& cm);

struct NormalizedConfusion {
  std::vector<std::vector<double>> rows;
  std::vector<bool> zero_row;
};
NormalizedConfusion normalize_confusion(const ConfusionMatrix& cm);

/// Step-wise area under the precision-recall curve. Scores are swept in
/// descending order with tied scores entering together. Requires at least
/// one positive and one negative label.
double auprc(const std::vector<double>& scores, const std::vector<int>& labels);

struct MetricsReport {
  PRF micro;
  std::vector<PRF> per_class;
  ConfusionMatrix confusion;
  NormalizedConfusion normalized;
  std::optional<double> auprc;
  bool include_negative = false;

  std::string to_json() const;
};

MetricsReport make_report(const ConfusionMatrix& cm, bool include_negative = false,
                          std::optional<double> auprc_value = std::nullopt);

/// Header row and column of label names, then one row per gold label.
std::string confusion_csv(const ConfusionMatrix& cm);
std::string normalized_confusion_csv(const NormalizedConfusion& n);

}  // namespace egfi

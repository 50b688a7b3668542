// SPDX-License-Identifier: Apache-2.0
#include "egfi/metrics.hpp"

#include "egfi/corpus.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace egfi {

ConfusionMatrix::ConfusionMatrix(int classes) : n_(classes), counts_(static_cast<std::size_t>(classes * classes), 0) {
  if (classes < 2) throw std::invalid_argument("confusion matrix needs at least two classes");
}

ConfusionMatrix ConfusionMatrix::from_predictions(const std::vector<int>& gold, const std::vector<int>& predicted,
                                                  int classes) {
  if (gold.size() != predicted.size()) throw std::invalid_argument("gold/predicted length mismatch");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < gold.size(); ++i) cm.add(gold[i], predicted[i]);
  return cm;
}

std::size_t ConfusionMatrix::index(int g, int p) const {
  if (g < 0 || g >= n_ || p < 0 || p >= n_) throw std::out_of_range("confusion matrix label out of range");
  return static_cast<std::size_t>(g * n_ + p);
}

void ConfusionMatrix::add(int gold, int predicted, std::int64_t count) {
  if (count < 0) throw std::invalid_argument("confusion counts must be nonnegative");
  counts_[index(gold, predicted)] += count;
}

std::int64_t ConfusionMatrix::row_sum(int gold) const {
  std::int64_t s = 0;
  for (int p = 0; p < n_; ++p) s += at(gold, p);
  return s;
}

std::int64_t ConfusionMatrix::col_sum(int predicted) const {
  std::int64_t s = 0;
  for (int g = 0; g < n_; ++g) s += at(g, predicted);
  return s;
}

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0}); }

PRF prf_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
  PRF r;
  r.tp = tp;
  r.fp = fp;
  r.fn = fn;
  if (tp + fp > 0) r.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  else r.undefined = true;
  if (tp + fn > 0) r.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  else r.undefined = true;
  if (r.precision + r.recall > 0) r.f1 = 2 * r.precision * r.recall / (r.precision + r.recall);
  else r.undefined = true;
  return r;
}

PRF micro_prf(const ConfusionMatrix& cm, bool include_negative) {
  const int last = include_negative ? cm.classes() : cm.classes() - 1;
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (int c = 0; c < last; ++c) {
    const std::int64_t hit = cm.at(c, c);
    tp += hit;
    fp += cm.col_sum(c) - hit;
    fn += cm.row_sum(c) - hit;
  }
  return prf_from_counts(tp, fp, fn);
}

std::vector<PRF> per_class_prf(const ConfusionMatrix& cm) {
  std::vector<PRF> out;
  for (int c = 0; c < cm.classes(); ++c) {
    const std::int64_t hit = cm.at(c, c);
    out.push_back(prf_from_counts(hit, cm.col_sum(c) - hit, cm.row_sum(c) - hit));
  }
  return out;
}

NormalizedConfusion normalize_confusion(const ConfusionMatrix& cm) {
  NormalizedConfusion n;
  for (int g = 0; g < cm.classes(); ++g) {
    const std::int64_t sum = cm.row_sum(g);
    std::vector<double> row(static_cast<std::size_t>(cm.classes()), 0.0);
    if (sum > 0)
      for (int p = 0; p < cm.classes(); ++p)
        row[static_cast<std::size_t>(p)] = static_cast<double>(cm.at(g, p)) / static_cast<double>(sum);
    n.rows.push_back(std::move(row));
    n.zero_row.push_back(sum == 0);
  }
  return n;
}

double auprc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auprc: scores/labels length mismatch");
  const auto positives = std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; });
  if (positives == 0 || positives == static_cast<std::ptrdiff_t>(labels.size()))
    throw std::invalid_argument("auprc: needs at least one positive and one negative label");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double area = 0.0, prev_recall = 0.0;
  std::int64_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += labels[order[j]] != 0;
      ++seen;
      ++j;
    }
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return area;
}

MetricsReport make_report(const ConfusionMatrix& cm, bool include_negative, std::optional<double> auprc_value) {
  return {micro_prf(cm, include_negative), per_class_prf(cm), cm, normalize_confusion(cm), auprc_value,
          include_negative};
}

namespace {

std::string label_name(int c, int classes) {
  if (classes == static_cast<int>(kNumLabels)) return std::string(to_string(static_cast<RelationLabel>(c)));
  return "class" + std::to_string(c);
}

nlohmann::json prf_json(const PRF& p) {
  return {{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1},
          {"tp", p.tp}, {"fp", p.fp}, {"fn", p.fn}, {"undefined", p.undefined}};
}

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["micro"] = prf_json(micro);
  j["micro_includes_negative"] = include_negative;
  const int n = confusion.classes();
  for (int c = 0; c < n; ++c) j["per_class"][label_name(c, n)] = prf_json(per_class[static_cast<std::size_t>(c)]);
  for (int g = 0; g < n; ++g) {
    nlohmann::json raw = nlohmann::json::array();
    for (int p = 0; p < n; ++p) raw.push_back(confusion.at(g, p));
    j["confusion"][label_name(g, n)] = raw;
    j["confusion_normalized"][label_name(g, n)] = normalized.rows[static_cast<std::size_t>(g)];
    if (normalized.zero_row[static_cast<std::size_t>(g)]) j["empty_rows"].push_back(label_name(g, n));
  }
  if (auprc) j["auprc"] = *auprc;
  return j.dump(2) + "\n";
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream out;
  const int n = cm.classes();
  out << "gold\\predicted";
  for (int p = 0; p < n; ++p) out << ',' << label_name(p, n);
  out << '\n';
  for (int g = 0; g < n; ++g) {
    out << label_name(g, n);
    for (int p = 0; p < n; ++p) out << ',' << cm.at(g, p);
    out << '\n';
  }
  return out.str();
}

std::string normalized_confusion_csv(const NormalizedConfusion& norm) {
  std::ostringstream out;
  out.precision(6);
  const int n = static_cast<int>(norm.rows.size());
  out << "gold\\predicted";
  for (int p = 0; p < n; ++p) out << ',' << label_name(p, n);
  out << '\n';
  for (int g = 0; g < n; ++g) {
    out << label_name(g, n);
    for (double v : norm.rows[static_cast<std::size_t>(g)]) out << ',' << std::fixed << v;
    out << '\n';
  }
  return out.str();
}

}  // namespace egfi

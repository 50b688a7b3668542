// SPDX-License-Identifier: Apache-2.0
#include "egfi/ablation.hpp"

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

namespace egfi {

double relative_drop(double full_f1, double variant_f1) {
  return full_f1 > 0 ? (full_f1 - variant_f1) / full_f1 : 0.0;
}

AblationReport run_ablation(const std::vector<Example>& train, const std::vector<Example>& dev,
                            const std::vector<Example>& test, const TrainConfig& config, const ModelSpec& base,
                            const Vocab& vocab) {
  AblationReport report;
  for (Ablation a : kAllAblations) {
    ModelSpec spec = base;
    spec.head.ablation = a;
    spdlog::info("ablation run: {}", to_string(a));
    const auto result = train_classifier(train, dev, config, spec, vocab);
    const auto metrics = evaluate(result.best.model, test, config.include_negative_in_micro);
    report.rows.push_back({a, metrics.micro, 0.0, spec.head.fused_width()});
  }
  const double full = report.rows.front().micro.f1;
  for (auto& r : report.rows) r.delta = relative_drop(full, r.micro.f1);
  return report;
}

std::string AblationReport::to_text() const {
  std::string out = "variant\tprecision\trecall\tf1\tdelta\n";
  for (const auto& r : rows) {
    const std::string delta = r.variant == Ablation::full ? "-" : fmt::format("{:.2f}%", 100.0 * r.delta);
    out += fmt::format("{}\t{:.4f}\t{:.4f}\t{:.4f}\t{}\n", to_string(r.variant), r.micro.precision, r.micro.recall,
                       r.micro.f1, delta);
  }
  return out;
}

}  // namespace egfi

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "egfi/fusion.hpp"
#include "egfi/metrics.hpp"
#include "egfi/trainer.hpp"

#include <string>
#include <vector>

namespace egfi {

struct AblationRow {
  Ablation variant = Ablation::full;
  PRF micro;
  /// Relative F1 drop against the full model, (F1_full - F1) / F1_full.
  double delta = 0.0;
  int fused_width = 0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  /// Tab-separated table: variant, P, R, F1, delta (a dash for the full row).
  std::string to_text() const;
};

/// Relative drop from unrounded scores; 0 when the full F1 is 0.
double relative_drop(double full_f1, double variant_f1);

/// Trains and tests the full model and each single-component ablation.
AblationReport run_ablation(const std::vector<Example>& train, const std::vector<Example>& dev,
                            const std::vector<Example>& test, const TrainConfig& config, const ModelSpec& base,
                            const Vocab& vocab);

}  // namespace egfi

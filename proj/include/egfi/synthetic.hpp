// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "egfi/corpus.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace egfi {

/// Knobs for the cue-word corpus used in scaled-down experiments. Each
/// relation is signalled by one of its cue phrases placed between the two
/// target mentions; negatives use neutral connectives.
struct SyntheticCorpusConfig {
  std::size_t train = 2000;
  std::size_t dev = 400;
  std::size_t test = 400;
  double negative_fraction = 0.9;
  /// Share of the positives given to advise, effect, mechanism, int.
  std::array<double, 4> positive_shares = {0.3, 0.3, 0.3, 0.1};
  std::size_t lexicon_size = 80;
  std::uint64_t seed = 13;
};

struct SyntheticCorpus {
  std::vector<SentenceRecord> train, dev, test;
  std::vector<EntityMention> lexicon;  // surface + type of every drug name used
};

SyntheticCorpus make_synthetic_corpus(const SyntheticCorpusConfig& config);

/// Per-label instance counts for a partition of `n` instances. Rounds so the
/// counts sum to `n` exactly.
std::array<std::size_t, kNumLabels> synthetic_label_counts(const SyntheticCorpusConfig& config, std::size_t n);

}  // namespace egfi

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "egfi/checkpoint_io.hpp"
#include "egfi/corpus.hpp"
#include "egfi/encoder.hpp"
#include "egfi/fusion.hpp"
#include "egfi/metrics.hpp"
#include "egfi/tokenizer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace egfi {

struct TrainConfig {
  double learning_rate = 3e-5;
  int warmup_steps = 0;
  int batch_size = 8;
  int max_epochs = 7;
  int heads = 8;
  double gru_dropout = 0.5;
  double fc_dropout = 0.1;
  std::uint64_t seed = 13;
  /// 0 derives max_epochs * ceil(train / batch_size).
  int total_steps = 0;
  int patience = 5;
  bool early_stopping = false;
  double weight_decay = 0.01;
  std::vector<double> grid = {1e-5, 2e-5, 3e-5, 4e-5, 5e-5};
  bool class_weighting = true;
  double loss_floor = 1e-12;
  bool include_negative_in_micro = false;

  static TrainConfig classification() { return {}; }
  /// Lower-rate preset used for the drug-target setting.
  static TrainConfig dti();
  static TrainConfig generation();

  void validate() const;
  int resolve_total_steps(std::size_t train_size) const;
  KeyValues to_key_values() const;
  /// Reads the keys written by to_key_values; absent keys keep `base` values.
  static TrainConfig from_key_values(const KeyValues& kv, TrainConfig base);
  static TrainConfig from_key_values(const KeyValues& kv);
};

struct ClassWeights {
  std::vector<double> weights;
  std::vector<std::size_t> counts;
  std::size_t total = 0;
};

/// W_i = C_all / (N * C_i). Every count must be at least 1.
ClassWeights class_weights(const std::vector<std::size_t>& counts);

/// Mean of -W_target * log(max(p_target, floor)) over rows of `probs`.
/// `clamped` counts rows where the floor was used.
double weighted_ce(const std::vector<RowVector>& probs, const std::vector<int>& targets,
                   const std::vector<double>& weights, double floor = 1e-12, std::uint64_t* clamped = nullptr);

/// Linear warm-up to `peak` over `warmup` steps, then linear decay to 0 at `total`.
double lr_schedule(long step, long warmup, long total, double peak);

/// True when the last `patience` deltas of `history` are all rises.
bool early_stop(const std::vector<double>& history, int patience = 5);

/// Adaptive moments with weight decay applied directly to the parameters.
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamW() = default;
  explicit AdamW(const ParamStore& store);

  /// Applies one update from the gradients currently in `store`.
  void step(ParamStore& store, double rate, double decay);
  long steps() const { return step_; }

  std::vector<Matrix>& first_moments() { return m_; }
  std::vector<Matrix>& second_moments() { return v_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }
  void set_steps(long s) { step_ = s; }

 private:
  std::vector<Matrix> m_, v_;
  long step_ = 0;
};

/// A tokenized pair instance ready for the classifier.
struct Example {
  std::string id;
  TokenizedInput input;
  int label = 0;
};

/// Tokenizes instances; instances whose entity spans cannot fit `max_len`
/// are dropped and counted in `dropped`.
std::vector<Example> prepare_examples(const std::vector<PairInstance>& instances, const Vocab& vocab,
                                      std::size_t max_len = kDefaultMaxLen, std::size_t* dropped = nullptr);

std::vector<std::size_t> label_counts(const std::vector<Example>& examples);

/// How to build a fresh classifier: desk-scale encoder from scratch, or a
/// loaded encoder under a new head.
struct ModelSpec {
  EncoderConfig encoder;
  FusionConfig head;
  std::optional<EncoderParams> pretrained;

  RelationClassifier build(std::uint64_t seed) const;
};

struct EpochRecord {
  int epoch = 0;
  long step = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double dev_micro_f1 = 0.0;
};

struct Checkpoint {
  RelationClassifier model;
  AdamW optimizer;
  long step = 0;
  TrainConfig config;
  std::vector<EpochRecord> history;
  Vocab vocab;
  int best_epoch = 0;
};

/// Directory layout:
///   config.txt            encoder, head and training keys, step, seed
///   vocab.txt             the tokenizer vocabulary
///   tensors.tsv, tensors/ model parameters
///   moments.tsv, moments/ optimizer state (m.<name>, v.<name>)
///   history.csv           epoch,step,train_loss,dev_loss,dev_micro_f1
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

struct Prediction {
  int label = 0;
  RowVector probs;
};

std::vector<Prediction> predict(const RelationClassifier& model, const std::vector<Example>& examples);
MetricsReport evaluate(const RelationClassifier& model, const std::vector<Example>& examples,
                       bool include_negative = false);

struct TrainResult {
  Checkpoint best;
  std::uint64_t clamped_losses = 0;
  long steps = 0;
};

/// Seeded shuffled mini-batch training; keeps the checkpoint with the best
/// dev micro-F1. When `step_log` is given it receives `step,lr,loss` rows.
TrainResult train_classifier(const std::vector<Example>& train, const std::vector<Example>& dev,
                             const TrainConfig& config, const ModelSpec& spec, const Vocab& vocab,
                             std::ostream* step_log = nullptr);

struct GridRow {
  double learning_rate = 0.0;
  double dev_micro_f1 = 0.0;
};

struct GridReport {
  double best_rate = 0.0;
  std::vector<GridRow> rows;
  std::string to_text() const;
};

/// One training run per rate; the best dev micro-F1 wins, ties go to the
/// smaller rate.
GridReport grid_search(const std::vector<Example>& train, const std::vector<Example>& dev,
                       const TrainConfig& config, const ModelSpec& spec, const Vocab& vocab);
/// Selection rule on precomputed scores.
double select_best_rate(const std::vector<GridRow>& rows);

}  // namespace egfi

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "egfi/corpus.hpp"
#include "egfi/encoder.hpp"
#include "egfi/layers.hpp"
#include "egfi/tape.hpp"
#include "egfi/tokenizer.hpp"

#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace egfi {

/// Which parts of the head are active. Each non-full value removes one
/// component, mirroring the ablation table rows.
enum class Ablation { full, no_entity, no_sentence, no_attention, no_gru };
std::string_view to_string(Ablation a);
Ablation parse_ablation(std::string_view s);
inline constexpr std::array<Ablation, 5> kAllAblations = {Ablation::full, Ablation::no_entity, Ablation::no_sentence,
                                                          Ablation::no_attention, Ablation::no_gru};

struct FusionConfig {
  int heads = 8;
  int gru_hidden = 64;     // per direction
  int rep_width = 64;      // width of R_cls, E1, E2 and R_s
  double gru_dropout = 0.5;
  double fc_dropout = 0.1;
  int num_labels = static_cast<int>(kNumLabels);
  Ablation ablation = Ablation::full;

  bool use_attention() const { return ablation != Ablation::no_attention; }
  bool use_gru() const { return ablation != Ablation::no_gru; }
  bool use_entities() const { return ablation != Ablation::no_entity; }
  bool use_sentence() const { return ablation != Ablation::no_sentence; }
  /// Length of the fused vector M.
  int fused_width() const;

  KeyValues to_key_values() const;
  static FusionConfig from_key_values(const KeyValues& kv);
};

/// One GRU direction. Gate blocks are ordered [reset, update, candidate]:
///   r = sigmoid(x Wi_r + bi_r + h Wh_r + bh_r)
///   z = sigmoid(x Wi_z + bi_z + h Wh_z + bh_z)
///   n = tanh(x Wi_n + bi_n + r * (h Wh_n + bh_n))
///   h' = (1 - z) * n + z * h
struct GruDirection {
  Parameter* w_input = nullptr;   // d x 3g
  Parameter* b_input = nullptr;   // 1 x 3g
  Parameter* w_hidden = nullptr;  // g x 3g
  Parameter* b_hidden = nullptr;  // 1 x 3g

  int hidden() const { return static_cast<int>(w_hidden->value.rows()); }
  static GruDirection create(ParamStore& store, const std::string& name, int input, int hidden, std::mt19937_64& rng);
  static GruDirection bind(ParamStore& store, const std::string& name);
  /// Runs over every row of `x` in order (or reversed), returning rows in
  /// input order.
  Var run(Tape& t, Var x, bool reverse) const;
};

struct BiGru {
  GruDirection forward_dir;
  GruDirection backward_dir;

  int hidden() const { return forward_dir.hidden(); }
  static BiGru create(ParamStore& store, const std::string& name, int input, int hidden, std::mt19937_64& rng);
  static BiGru bind(ParamStore& store, const std::string& name);
  /// x holds real timesteps only; result is rows x 2g, [forward | backward].
  Var run(Tape& t, Var x) const;
};

// ---- packed sequences --------------------------------------------------------

/// Variable-length batch laid out time-major with sequences sorted by
/// decreasing length, so step t touches only the batch_sizes[t] sequences
/// still running. Padding never enters the recurrence.
struct PackedSequence {
  Matrix data;                         // sum(lengths) x d
  std::vector<int> batch_sizes;        // per timestep
  std::vector<int> sorted_indices;     // packed slot -> original batch index
  std::vector<int> lengths;            // original order
};

PackedSequence pack_padded(const std::vector<Matrix>& padded, const std::vector<int>& lengths);
/// Inverse of pack_padded for a packed tensor of any width; rows past each
/// length are zero.
std::vector<Matrix> unpack_padded(const Matrix& packed_rows, const PackedSequence& layout,
                                  const std::vector<Eigen::Index>& padded_lengths);

/// Bidirectional GRU over a packed batch.
Matrix packed_bigru(const PackedSequence& input, const BiGru& gru);
/// Single padded sequence: n x 2g output, rows >= length are zero.
Matrix packed_bigru(const Matrix& padded, int length, const BiGru& gru);
std::vector<Matrix> packed_bigru_batch(const std::vector<Matrix>& padded, const std::vector<int>& lengths,
                                       const BiGru& gru);

// ---- head ------------------------------------------------------------------

struct FusionOutput {
  RowVector r_cls, e1, e2, r_s;
  RowVector fused;  // M = [R_cls, E1, E2, R_s] (components removed by ablation are absent)
  RowVector logits;
  RowVector probs;
};

/// The classifier head, as a view over a ParamStore.
class FusionHead {
 public:
  static FusionHead create(ParamStore& store, const FusionConfig& config, int encoder_width, std::mt19937_64& rng,
                           const std::string& prefix = "head");
  static FusionHead bind(const ParamStore& store, const FusionConfig& config, const std::string& prefix = "head");

  struct Trace {
    Var attended;  // H'
    Var states;    // BiGRU states over real tokens (or H' rows without the GRU)
    std::optional<Var> r_cls, e1, e2, r_s;
    Var fused;
    Var logits;
  };

  /// `states`/`cls` come from the encoder over `ids.size()` positions, of
  /// which the first `length` are real. `rng` switches dropout on.
  Trace forward(Tape& t, Var states, Var cls, int length, TokenSpan e1, TokenSpan e2,
                std::mt19937_64* rng = nullptr) const;

  const FusionConfig& config() const { return config_; }
  const MultiHeadAttention& attention() const { return attention_; }
  const BiGru& gru() const { return gru_; }
  const Linear& sentence() const { return sentence_; }
  const Linear& entity1() const { return entity1_; }
  const Linear& entity2() const { return entity2_; }
  const Linear& cls() const { return cls_; }
  const Linear& classifier() const { return classifier_; }

 private:
  FusionConfig config_;
  MultiHeadAttention attention_;
  BiGru gru_;
  Linear sentence_, entity1_, entity2_, cls_, classifier_;
};

// Plain-matrix forms of the head's stages.

/// `mask[i]` is 1 for real tokens. A query row with no real key is an error.
Matrix multi_head_self_attention(const Matrix& states, const std::vector<int>& mask, const MultiHeadAttention& attn);
/// R_s = W_s tanh([h_1, h_length]) + b_s
RowVector sentence_rep(const Matrix& states, int length, const Linear& layer);
/// E = W_e tanh(mean of span rows) + b_e
RowVector entity_rep(const Matrix& states, TokenSpan span, const Linear& layer);
/// R_cls = W_cls tanh(cls) + b_cls
RowVector cls_rep(const RowVector& cls, const Linear& layer);
/// M = [R_cls, E1, E2, R_s] with empty vectors skipped; probs = softmax(W_m M + b_m).
FusionOutput classify(const RowVector& r_cls, const RowVector& e1, const RowVector& e2, const RowVector& r_s,
                      const Linear& classifier);

RowVector softmax(const RowVector& logits);

// ---- full model --------------------------------------------------------------

/// Encoder and fusion head sharing one parameter store.
class RelationClassifier {
 public:
  RelationClassifier() = default;
  RelationClassifier(const EncoderConfig& encoder, const FusionConfig& head, std::uint64_t seed);
  /// Wraps externally loaded encoder weights with a fresh head.
  RelationClassifier(const EncoderParams& encoder, const FusionConfig& head, std::uint64_t seed);
  RelationClassifier(const RelationClassifier& other);
  RelationClassifier& operator=(const RelationClassifier& other);
  RelationClassifier(RelationClassifier&&) noexcept = default;
  RelationClassifier& operator=(RelationClassifier&&) noexcept = default;

  /// Builds the graph for one input. With `full_padding` the encoder runs
  /// over every padded position under the attention mask; otherwise over the
  /// real prefix only. Both give the same real-position states.
  FusionHead::Trace forward(Tape& t, const TokenizedInput& input, std::mt19937_64* rng = nullptr,
                            bool full_padding = false) const;

  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const EncoderConfig& encoder_config() const { return encoder_config_; }
  const FusionConfig& head_config() const { return head_config_; }
  Encoder encoder() const { return encoder_; }
  const FusionHead& head() const { return head_; }

 private:
  void rebind();

  EncoderConfig encoder_config_;
  FusionConfig head_config_;
  ParamStore store_;
  Encoder encoder_;
  FusionHead head_;
};

/// Composes the encoder, attention, packed BiGRU, the representation heads
/// and the softmax classifier in evaluation mode.
FusionOutput forward_full(const TokenizedInput& input, const RelationClassifier& model, bool full_padding = false);

}  // namespace egfi

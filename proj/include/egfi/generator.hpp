// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "egfi/checkpoint_io.hpp"
#include "egfi/corpus.hpp"
#include "egfi/layers.hpp"
#include "egfi/tape.hpp"
#include "egfi/tokenizer.hpp"
#include "egfi/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace egfi {

// ---- language model -----------------------------------------------------------

struct CausalLMConfig {
  int vocab_size = 0;
  int max_positions = 128;
  int width = 64;
  int layers = 2;
  int heads = 4;
  int ffn = 256;
  double init_std = 0.02;

  void validate() const;
  KeyValues to_key_values() const;
  static CausalLMConfig from_key_values(const KeyValues& kv);
};

/// Pre-norm decoder with strictly causal self-attention. The output
/// projection reuses the token embeddings (plus a free bias).
class CausalLM {
 public:
  CausalLM() = default;
  CausalLM(const CausalLMConfig& config, std::uint64_t seed);
  CausalLM(const CausalLM& other);
  CausalLM& operator=(const CausalLM& other);
  CausalLM(CausalLM&&) noexcept = default;
  CausalLM& operator=(CausalLM&&) noexcept = default;

  /// n x V next-token logits for each prefix position.
  Var logits(Tape& t, const std::vector<int>& ids) const;
  Matrix logits(const std::vector<int>& ids) const;

  const CausalLMConfig& config() const { return config_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

 private:
  void bind();

  struct Block {
    LayerNorm attention_norm;
    MultiHeadAttention attention;
    LayerNorm ffn_norm;
    Linear ffn_in, ffn_out;
  };
  CausalLMConfig config_;
  ParamStore store_;
  Parameter* tokens_ = nullptr;
  Parameter* positions_ = nullptr;
  Parameter* output_bias_ = nullptr;
  std::vector<Block> blocks_;
  LayerNorm final_norm_;
};

/// BOS + pieces + EOS, both ends being the end-of-text token. Longer
/// sequences are cut to `max_len` ids, keeping the closing end token.
std::vector<int> lm_sequence(std::string_view text, const Vocab& vocab, std::size_t max_len);

/// Teacher-forced mean of -log P(u_i | u_<i) over positions 1..n-1; PAD
/// targets are skipped.
double lm_nll(const CausalLM& model, const std::vector<int>& sequence, int pad_id = 0);
Var lm_nll(Tape& t, const CausalLM& model, const std::vector<int>& sequence, int pad_id = 0);
/// exp of the mean lm_nll over the corpus.
double perplexity(const CausalLM& model, const std::vector<std::vector<int>>& corpus, int pad_id = 0);

struct LMTrainResult {
  CausalLM model;
  double initial_perplexity = 0.0;
  double best_perplexity = 0.0;
  int best_epoch = 0;  // 0 means the initial model was never beaten
  long steps = 0;
  std::vector<double> heldout_history;  // one entry per finished epoch
};

/// Mini-batch training with the linear warm-up/decay schedule, perplexity
/// tracked on `heldout` after every epoch, best checkpoint kept, optional
/// early stop on rising held-out perplexity. A warm-up longer than the run
/// is clamped to the run length.
LMTrainResult train_lm(const CausalLM& init, const std::vector<std::vector<int>>& train,
                       const std::vector<std::vector<int>>& heldout, const TrainConfig& config);

/// Marked sentence text for every positive instance of `label`.
std::vector<std::string> relation_texts(const std::vector<PairInstance>& instances, RelationLabel label);

struct RelationModel {
  RelationLabel relation = RelationLabel::advise;
  LMTrainResult result;
};

/// One fine-tuned copy of `base` per positive relation. Each relation's
/// sentences are split into fine-tune and held-out parts (`heldout_fraction`).
std::vector<RelationModel> finetune_per_relation(const CausalLM& base, const std::vector<PairInstance>& corpus,
                                                 const Vocab& vocab, const TrainConfig& config,
                                                 double heldout_fraction = 0.1, std::size_t max_len = 128);

struct SampleConfig {
  int max_len = 64;
  double temperature = 1.0;
  /// 0 keeps the full distribution.
  int top_k = 0;
  std::uint64_t seed = 13;
};

/// Autoregressive sampling from the BOS token until the end token or
/// `max_len` generated tokens. The returned ids exclude BOS and the end token.
std::vector<int> sample_ids(const CausalLM& model, const Vocab& vocab, const SampleConfig& config);
std::string sample(const CausalLM& model, const Vocab& vocab, const SampleConfig& config);

void save_lm(const std::filesystem::path& dir, const CausalLM& model, const Vocab& vocab, const KeyValues& extra = {});
struct LoadedLM {
  CausalLM model;
  Vocab vocab;
  KeyValues config;
};
LoadedLM load_lm(const std::filesystem::path& dir);

// ---- filtering ------------------------------------------------------------------

/// Case-folded surface -> drug type, by majority vote over annotations with
/// ties going to the lexicographically smallest type name.
class DrugLexicon {
 public:
  void add(std::string_view surface, DrugType type, std::size_t count = 1);
  static DrugLexicon from_records(const std::vector<SentenceRecord>& records);
  static DrugLexicon from_instances(const std::vector<PairInstance>& instances);

  std::optional<DrugType> lookup(std::string_view surface) const;
  std::size_t size() const { return votes_.size(); }

 private:
  std::map<std::string, std::map<std::string, std::size_t>> votes_;
};

struct ExtractedPair {
  std::string drug1;
  DrugType type1 = DrugType::drug;
  std::string drug2;
  DrugType type2 = DrugType::drug;
};

struct FilterVerdict {
  bool pass = false;
  /// "R1".."R5" for failures, empty when passing.
  std::string rule;
  std::optional<ExtractedPair> pair;
};

/// Applies the rules in order and reports the first that fails:
///   R1 fewer than 5 words (marker tokens not counted)
///   R2 no marker token
///   R3 exactly one drug annotated
///   R4 more than two drugs annotated
///   R5 malformed markers, or a marker type that disagrees with the lexicon
///      (surfaces missing from the lexicon fail here too)
FilterVerdict filter_generated(std::string_view text, const DrugLexicon& lexicon);

/// Unordered, case-folded surface pairs seen in training.
class PairIndex {
 public:
  void add(std::string_view a, std::string_view b);
  static PairIndex from_instances(const std::vector<PairInstance>& instances);
  bool contains(std::string_view a, std::string_view b) const;
  std::size_t size() const { return pairs_.size(); }

 private:
  std::set<std::pair<std::string, std::string>> pairs_;
};

bool novelty_check(const ExtractedPair& pair, const PairIndex& index);

// ---- candidates and ranking ---------------------------------------------------------

struct GeneratedCandidate {
  std::string text;
  RelationLabel relation = RelationLabel::advise;
  std::optional<FilterVerdict> verdict;  // unset until filtered
  bool novel = false;
  std::optional<double> score;           // set only for passing candidates
  std::string vocab_fingerprint;

  std::string to_json_line() const;
  static GeneratedCandidate from_json_line(const std::string& line, std::size_t line_number);
};

void write_candidates(const std::filesystem::path& path, const std::vector<GeneratedCandidate>& candidates);
std::vector<GeneratedCandidate> read_candidates(const std::filesystem::path& path);

/// Fills verdict and novelty for every candidate.
void filter_candidates(std::vector<GeneratedCandidate>& candidates, const DrugLexicon& lexicon,
                       const PairIndex& training_pairs);

/// Turns a marked sentence into the anonymized classifier input.
std::string anonymize_marked(std::string_view marked_text);

struct RankedRow {
  std::string sentence;
  std::string drug1, type1, drug2, type2;
  RelationLabel relation = RelationLabel::advise;
  double score = 0.0;
};

/// Scores passing candidates with the classifier's probability for their
/// relation, then keeps the top `k` per relation (score descending, text
/// ascending on ties). `int` is never ranked.
std::map<RelationLabel, std::vector<RankedRow>> rank_candidates(std::vector<GeneratedCandidate>& candidates,
                                                                const Checkpoint& classifier, std::size_t k,
                                                                bool novel_only = false);

/// sentence, drug1, type1, drug2, type2, relation, score
std::string ranked_tsv(const std::map<RelationLabel, std::vector<RankedRow>>& tables);

}  // namespace egfi

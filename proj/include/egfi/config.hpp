// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "egfi/checkpoint_io.hpp"
#include "egfi/corpus.hpp"
#include "egfi/encoder.hpp"
#include "egfi/fusion.hpp"
#include "egfi/generator.hpp"
#include "egfi/tokenizer.hpp"
#include "egfi/trainer.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace egfi {

/// Flat run configuration. Every key has a default; files and overrides may
/// only set known keys.
///
/// File grammar, one entry per line:
///   key = value      surrounding whitespace is trimmed
///   # comment        '#' starts a comment anywhere on a line
/// Later lines win over earlier ones.
class RunConfig {
 public:
  RunConfig();

  /// Key -> (default, description) in key order.
  static const std::vector<std::pair<std::string, std::pair<std::string, std::string>>>& schema();

  bool known(const std::string& key) const;
  /// Throws std::invalid_argument listing every unknown key.
  void merge(const KeyValues& kv, const std::string& origin);
  void merge_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  long get_long(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  const KeyValues& values() const { return values_; }
  std::string to_text() const;

  TrainConfig classifier_train() const;
  TrainConfig generator_train() const;
  TrainConfig base_lm_train() const;
  EncoderConfig encoder(int vocab_size) const;
  FusionConfig head() const;
  CausalLMConfig lm(int vocab_size) const;
  NegativeFilterConfig negative_filter() const;
  SampleConfig sampling() const;

 private:
  KeyValues values_;
};

/// Vocabulary over both the anonymized classifier inputs and the marked
/// generator texts of `instances`, so both models share one id space.
Vocab build_pipeline_vocab(const std::vector<PairInstance>& instances, int target_size,
                           std::string_view end_token = kDefaultEndToken);

}  // namespace egfi

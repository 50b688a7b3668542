// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "egfi/checkpoint_io.hpp"
#include "egfi/layers.hpp"
#include "egfi/tape.hpp"
#include "egfi/tokenizer.hpp"

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace egfi {

struct EncoderConfig {
  int vocab_size = 0;
  int max_positions = static_cast<int>(kDefaultMaxLen);
  int width = 64;
  int layers = 2;
  int heads = 4;
  int ffn = 256;
  double init_std = 0.02;

  void validate() const;
  KeyValues to_key_values() const;
  static EncoderConfig from_key_values(const KeyValues& kv);
};

/// Per-token contextual states (n x d) and the pooled first-position vector.
struct EncoderOutput {
  Matrix states;
  RowVector cls;
};

/// Post-norm transformer encoder over token + learned position embeddings.
/// A view: parameters live in a ParamStore owned elsewhere.
class Encoder {
 public:
  static Encoder create(ParamStore& store, const EncoderConfig& config, std::mt19937_64& rng,
                        const std::string& prefix = "encoder");
  static Encoder bind(const ParamStore& store, const EncoderConfig& config, const std::string& prefix = "encoder");

  struct Result {
    Var states;
    Var cls;
  };

  /// Positions >= `length` are padding: they are masked out of every
  /// attention row, so states at real positions do not depend on them.
  /// `attention`, when given, receives [layer][head] attention matrices.
  Result forward(Tape& t, const std::vector<int>& ids, int length,
                 std::vector<std::vector<Matrix>>* attention = nullptr) const;

  const EncoderConfig& config() const { return config_; }

 private:
  struct Block {
    MultiHeadAttention attention;
    LayerNorm attention_norm;
    Linear ffn_in, ffn_out;
    LayerNorm ffn_norm;
  };
  EncoderConfig config_;
  Parameter* tokens_ = nullptr;
  Parameter* positions_ = nullptr;
  LayerNorm embedding_norm_;
  std::vector<Block> blocks_;
};

/// A standalone encoder: configuration plus its own parameters.
struct EncoderParams {
  EncoderConfig config;
  ParamStore store;

  static EncoderParams initialize(const EncoderConfig& config, std::uint64_t seed);
  Encoder encoder() const { return Encoder::bind(store, config); }
};

EncoderOutput encoder_forward(const TokenizedInput& input, const EncoderParams& params);

/// Thrown when no checkpoint exists at the requested location; callers fall
/// back to the desk-scale encoder.
class AdapterUnavailable : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// Writes `config.txt` plus the tensor directory (see checkpoint_io.hpp).
void save_encoder(const std::filesystem::path& dir, const EncoderParams& params);

/// Loads an externally produced encoder checkpoint in the same layout. The
/// result satisfies the EncoderOutput contract at its own width.
EncoderParams load_pretrained_adapter(const std::filesystem::path& dir);

}  // namespace egfi

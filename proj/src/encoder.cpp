// SPDX-License-Identifier: Apache-2.0
#include "egfi/encoder.hpp"

#include <stdexcept>

namespace egfi {

namespace fs = std::filesystem;

void EncoderConfig::validate() const {
  if (vocab_size <= 0) throw std::invalid_argument("encoder vocab_size must be positive");
  if (width <= 0 || layers < 0 || heads <= 0 || ffn <= 0 || max_positions <= 0)
    throw std::invalid_argument("encoder dimensions must be positive");
  if (width % heads != 0)
    throw std::invalid_argument("encoder width " + std::to_string(width) + " not divisible by heads " +
                                std::to_string(heads));
}

KeyValues EncoderConfig::to_key_values() const {
  return {{"vocab_size", std::to_string(vocab_size)}, {"max_positions", std::to_string(max_positions)},
          {"width", std::to_string(width)},           {"layers", std::to_string(layers)},
          {"heads", std::to_string(heads)},           {"ffn", std::to_string(ffn)}};
}

EncoderConfig EncoderConfig::from_key_values(const KeyValues& kv) {
  auto get = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw CheckpointError(std::string("encoder config is missing '") + key + "'");
    try {
      return std::stoi(it->second);
    } catch (const std::logic_error&) {
      throw CheckpointError(std::string("encoder config '") + key + "' is not an integer");
    }
  };
  EncoderConfig c;
  c.vocab_size = get("vocab_size");
  c.max_positions = get("max_positions");
  c.width = get("width");
  c.layers = get("layers");
  c.heads = get("heads");
  c.ffn = get("ffn");
  c.validate();
  return c;
}

Encoder Encoder::create(ParamStore& store, const EncoderConfig& config, std::mt19937_64& rng,
                        const std::string& prefix) {
  config.validate();
  const double sd = config.init_std;
  store.add(prefix + ".token_embedding", random_normal(config.vocab_size, config.width, sd, rng));
  store.add(prefix + ".position_embedding", random_normal(config.max_positions, config.width, sd, rng));
  LayerNorm::create(store, prefix + ".embedding_norm", config.width);
  for (int l = 0; l < config.layers; ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l);
    MultiHeadAttention::create(store, p + ".attention", config.width, config.heads, rng, sd);
    LayerNorm::create(store, p + ".attention_norm", config.width);
    Linear::create(store, p + ".ffn_in", config.width, config.ffn, rng, sd);
    Linear::create(store, p + ".ffn_out", config.ffn, config.width, rng, sd);
    LayerNorm::create(store, p + ".ffn_norm", config.width);
  }
  return bind(store, config, prefix);
}

Encoder Encoder::bind(const ParamStore& cstore, const EncoderConfig& config, const std::string& prefix) {
  config.validate();
  // Views never write parameter values; gradients are the only mutable state.
  auto& store = const_cast<ParamStore&>(cstore);
  Encoder e;
  e.config_ = config;
  e.tokens_ = &store.get(prefix + ".token_embedding");
  e.positions_ = &store.get(prefix + ".position_embedding");
  e.embedding_norm_ = LayerNorm::bind(store, prefix + ".embedding_norm");
  for (int l = 0; l < config.layers; ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l);
    e.blocks_.push_back({MultiHeadAttention::bind(store, p + ".attention", config.heads),
                         LayerNorm::bind(store, p + ".attention_norm"), Linear::bind(store, p + ".ffn_in"),
                         Linear::bind(store, p + ".ffn_out"), LayerNorm::bind(store, p + ".ffn_norm")});
  }
  return e;
}

Encoder::Result Encoder::forward(Tape& t, const std::vector<int>& ids, int length,
                                 std::vector<std::vector<Matrix>>* attention) const {
  const auto n = static_cast<Eigen::Index>(ids.size());
  if (n == 0 || length <= 0 || length > n) throw std::invalid_argument("encoder: invalid length");
  if (n > config_.max_positions)
    throw std::invalid_argument("encoder: " + std::to_string(n) + " tokens exceed max_positions " +
                                std::to_string(config_.max_positions));
  for (int id : ids)
    if (id < 0 || id >= config_.vocab_size)
      throw std::out_of_range("encoder: token id " + std::to_string(id) + " outside vocabulary of size " +
                              std::to_string(config_.vocab_size));

  std::vector<int> position_ids(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) position_ids[i] = static_cast<int>(i);
  Var x = add(gather_rows(t.param(*tokens_), ids), gather_rows(t.param(*positions_), position_ids));
  x = embedding_norm_(t, x);

  const Matrix bias = padding_bias(n, length);
  const Matrix* mask = length < n ? &bias : nullptr;
  if (attention != nullptr) attention->clear();
  for (const Block& b : blocks_) {
    std::vector<Matrix> maps;
    Var a = b.attention(t, x, mask, attention != nullptr ? &maps : nullptr);
    if (attention != nullptr) attention->push_back(std::move(maps));
    x = b.attention_norm(t, add(x, a));
    Var f = b.ffn_out(t, gelu(b.ffn_in(t, x)));
    x = b.ffn_norm(t, add(x, f));
  }
  return {x, slice_rows(x, 0, 1)};
}

EncoderParams EncoderParams::initialize(const EncoderConfig& config, std::uint64_t seed) {
  EncoderParams p;
  p.config = config;
  std::mt19937_64 rng(seed);
  Encoder::create(p.store, config, rng);
  return p;
}

EncoderOutput encoder_forward(const TokenizedInput& input, const EncoderParams& params) {
  Tape t;
  const Encoder enc = params.encoder();
  const auto r = enc.forward(t, input.ids, input.length);
  return {r.states.value(), r.cls.value()};
}

void save_encoder(const fs::path& dir, const EncoderParams& params) {
  fs::create_directories(dir);
  write_key_values(dir / "config.txt", params.config.to_key_values());
  write_tensors(dir, snapshot(params.store));
}

EncoderParams load_pretrained_adapter(const fs::path& dir) {
  if (!fs::exists(dir / "config.txt"))
    throw AdapterUnavailable("adapter unavailable: no checkpoint at " + dir.string());
  EncoderParams p;
  p.config = EncoderConfig::from_key_values(read_key_values(dir / "config.txt"));
  std::mt19937_64 rng(0);
  Encoder::create(p.store, p.config, rng);
  assign(p.store, read_tensors(dir));
  return p;
}

}  // namespace egfi

// SPDX-License-Identifier: Apache-2.0
#include "egfi/config.hpp"

#include <stdexcept>

namespace egfi {

namespace {

using Entry = std::pair<std::string, std::pair<std::string, std::string>>;

const std::vector<Entry> kSchema = {
    // classification schedule
    {"learning_rate", {"3e-5", "classifier peak learning rate"}},
    {"warmup_steps", {"0", "classifier warm-up steps"}},
    {"batch_size", {"8", "classifier batch size"}},
    {"max_epochs", {"7", "classifier epochs"}},
    {"head_heads", {"8", "attention heads in the fusion head"}},
    {"dropout_gru", {"0.5", "dropout on BiGRU outputs"}},
    {"dropout_fc", {"0.1", "dropout after each tanh in the FC heads"}},
    {"total_steps", {"0", "decay horizon; 0 derives epochs * batches per epoch"}},
    {"patience", {"5", "consecutive rises that trigger early stopping"}},
    {"early_stopping", {"false", "stop classifier training on rising dev loss"}},
    {"weight_decay", {"0.01", "decoupled weight decay"}},
    {"grid", {"1e-5,2e-5,3e-5,4e-5,5e-5", "learning rates tried by grid search"}},
    {"class_weighting", {"true", "inverse-frequency class weights in the loss"}},
    {"loss_floor", {"1e-12", "probability floor inside the log"}},
    {"include_negative_in_micro", {"false", "count the negative class in micro scores"}},
    // model shape
    {"vocab_size", {"600", "target vocabulary size"}},
    {"max_len", {"300", "classifier sequence length"}},
    {"encoder_width", {"64", "encoder width"}},
    {"encoder_layers", {"2", "encoder layers"}},
    {"encoder_heads", {"4", "encoder attention heads"}},
    {"encoder_ffn", {"256", "encoder feed-forward width"}},
    {"gru_hidden", {"64", "BiGRU hidden size per direction"}},
    {"rep_width", {"64", "width of each representation vector"}},
    {"ablation", {"full", "full|no_entity|no_sentence|no_attention|no_gru"}},
    {"pretrained_encoder", {"", "optional encoder checkpoint directory"}},
    // generation
    {"gen_learning_rate", {"3e-5", "fine-tune peak learning rate"}},
    {"gen_warmup_steps", {"300", "fine-tune warm-up steps"}},
    {"gen_batch_size", {"16", "fine-tune batch size"}},
    {"gen_max_epochs", {"5", "fine-tune epochs"}},
    {"gen_patience", {"5", "consecutive perplexity rises that stop fine-tuning"}},
    {"base_learning_rate", {"1e-3", "base language model learning rate"}},
    {"base_epochs", {"3", "base language model epochs"}},
    {"heldout_fraction", {"0.1", "share of each relation held out for perplexity"}},
    {"lm_width", {"64", "language model width"}},
    {"lm_layers", {"2", "language model decoder blocks"}},
    {"lm_heads", {"4", "language model attention heads"}},
    {"lm_ffn", {"256", "language model feed-forward width"}},
    {"lm_max_len", {"128", "language model context length"}},
    {"end_token", {std::string(kDefaultEndToken), "end-of-text token surface"}},
    {"sample_max_len", {"64", "maximum generated tokens"}},
    {"temperature", {"1.0", "sampling temperature"}},
    {"top_k", {"0", "sample from the k most likely tokens; 0 disables"}},
    {"samples_per_relation", {"50", "candidates generated per relation"}},
    {"augmentation_ratio", {"0", "generated sentences mixed into classifier training per original"}},
    // corpus and mining
    {"dev_fraction", {"0.1", "share of training pairs moved to dev"}},
    {"filter_identical", {"true", "drop negatives whose mentions are identical"}},
    {"filter_nested", {"true", "drop negatives whose mention contains the other"}},
    {"filter_coordinate", {"true", "drop negatives inside a coordinate drug list"}},
    {"rank_k", {"5", "rows kept per relation when ranking"}},
    {"novel_only", {"false", "rank only pairs absent from the training data"}},
    {"seed", {"13", "run seed; subsystem seeds derive from it"}},
};

}  // namespace

const std::vector<Entry>& RunConfig::schema() { return kSchema; }

RunConfig::RunConfig() {
  for (const auto& [key, def] : kSchema) values_[key] = def.first;
}

bool RunConfig::known(const std::string& key) const { return values_.count(key) > 0; }

void RunConfig::merge(const KeyValues& kv, const std::string& origin) {
  std::string unknown;
  for (const auto& [k, v] : kv)
    if (!known(k)) unknown += (unknown.empty() ? "" : ", ") + k;
  if (!unknown.empty()) throw std::invalid_argument(origin + ": unknown config key(s): " + unknown);
  for (const auto& [k, v] : kv) values_[k] = v;
}

void RunConfig::merge_file(const std::filesystem::path& path) { merge(read_key_values(path), path.string()); }

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!known(key)) throw std::invalid_argument("unknown config key(s): " + key);
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("unknown config key(s): " + key);
  return it->second;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::logic_error&) {
  }
  throw std::invalid_argument("config key '" + key + "': '" + v + "' is not a number");
}

long RunConfig::get_long(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const long d = std::stol(v, &used);
    if (used == v.size()) return d;
  } catch (const std::logic_error&) {
  }
  throw std::invalid_argument("config key '" + key + "': '" + v + "' is not an integer");
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config key '" + key + "': '" + v + "' is not a boolean");
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

TrainConfig RunConfig::classifier_train() const {
  KeyValues kv;
  for (const char* k : {"learning_rate", "warmup_steps", "batch_size", "max_epochs", "head_heads", "dropout_gru",
                        "dropout_fc", "seed", "total_steps", "patience", "early_stopping", "weight_decay", "grid",
                        "class_weighting", "loss_floor", "include_negative_in_micro"})
    kv[k] = get(k);
  TrainConfig c = TrainConfig::from_key_values(kv);
  c.validate();
  return c;
}

TrainConfig RunConfig::generator_train() const {
  TrainConfig c = TrainConfig::generation();
  c.learning_rate = get_double("gen_learning_rate");
  c.warmup_steps = static_cast<int>(get_long("gen_warmup_steps"));
  c.batch_size = static_cast<int>(get_long("gen_batch_size"));
  c.max_epochs = static_cast<int>(get_long("gen_max_epochs"));
  c.patience = static_cast<int>(get_long("gen_patience"));
  c.weight_decay = get_double("weight_decay");
  c.seed = static_cast<std::uint64_t>(get_long("seed"));
  c.validate();
  return c;
}

TrainConfig RunConfig::base_lm_train() const {
  TrainConfig c = generator_train();
  c.learning_rate = get_double("base_learning_rate");
  c.max_epochs = static_cast<int>(get_long("base_epochs"));
  c.warmup_steps = 0;
  c.early_stopping = false;
  c.validate();
  return c;
}

EncoderConfig RunConfig::encoder(int vocab_size) const {
  EncoderConfig c;
  c.vocab_size = vocab_size;
  c.max_positions = static_cast<int>(get_long("max_len"));
  c.width = static_cast<int>(get_long("encoder_width"));
  c.layers = static_cast<int>(get_long("encoder_layers"));
  c.heads = static_cast<int>(get_long("encoder_heads"));
  c.ffn = static_cast<int>(get_long("encoder_ffn"));
  c.validate();
  return c;
}

FusionConfig RunConfig::head() const {
  FusionConfig c;
  c.heads = static_cast<int>(get_long("head_heads"));
  c.gru_hidden = static_cast<int>(get_long("gru_hidden"));
  c.rep_width = static_cast<int>(get_long("rep_width"));
  c.gru_dropout = get_double("dropout_gru");
  c.fc_dropout = get_double("dropout_fc");
  c.ablation = parse_ablation(get("ablation"));
  return c;
}

CausalLMConfig RunConfig::lm(int vocab_size) const {
  CausalLMConfig c;
  c.vocab_size = vocab_size;
  c.max_positions = static_cast<int>(get_long("lm_max_len"));
  c.width = static_cast<int>(get_long("lm_width"));
  c.layers = static_cast<int>(get_long("lm_layers"));
  c.heads = static_cast<int>(get_long("lm_heads"));
  c.ffn = static_cast<int>(get_long("lm_ffn"));
  c.validate();
  return c;
}

NegativeFilterConfig RunConfig::negative_filter() const {
  return {get_bool("filter_identical"), get_bool("filter_nested"), get_bool("filter_coordinate")};
}

SampleConfig RunConfig::sampling() const {
  SampleConfig c;
  c.max_len = static_cast<int>(get_long("sample_max_len"));
  c.temperature = get_double("temperature");
  c.top_k = static_cast<int>(get_long("top_k"));
  c.seed = static_cast<std::uint64_t>(get_long("seed"));
  return c;
}

Vocab build_pipeline_vocab(const std::vector<PairInstance>& instances, int target_size, std::string_view end_token) {
  std::vector<std::string> texts;
  texts.reserve(2 * instances.size());
  for (const auto& inst : instances) {
    texts.push_back(inst.enriched_text);
    texts.push_back(mark_entities(inst.text, inst.e1, inst.e2));
  }
  return build_vocab(texts, target_size, end_token);
}

}  // namespace egfi

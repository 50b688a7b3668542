// SPDX-License-Identifier: Apache-2.0
#include "egfi/generator.hpp"

#include "egfi/fusion.hpp"
#include "egfi/random.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <regex>
#include <sstream>
#include <stdexcept>

namespace egfi {

namespace fs = std::filesystem;

// ---- config -----------------------------------------------------------------------

void CausalLMConfig::validate() const {
  if (vocab_size <= 0) throw std::invalid_argument("language model vocab_size must be positive");
  if (width <= 0 || layers < 0 || heads <= 0 || ffn <= 0 || max_positions < 2)
    throw std::invalid_argument("language model dimensions must be positive");
  if (width % heads != 0) throw std::invalid_argument("language model width not divisible by heads");
}

KeyValues CausalLMConfig::to_key_values() const {
  return {{"lm_vocab_size", std::to_string(vocab_size)}, {"lm_max_positions", std::to_string(max_positions)},
          {"lm_width", std::to_string(width)},           {"lm_layers", std::to_string(layers)},
          {"lm_heads", std::to_string(heads)},           {"lm_ffn", std::to_string(ffn)}};
}

CausalLMConfig CausalLMConfig::from_key_values(const KeyValues& kv) {
  auto get = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw CheckpointError(std::string("language model config is missing '") + key + "'");
    return std::stoi(it->second);
  };
  CausalLMConfig c;
  c.vocab_size = get("lm_vocab_size");
  c.max_positions = get("lm_max_positions");
  c.width = get("lm_width");
  c.layers = get("lm_layers");
  c.heads = get("lm_heads");
  c.ffn = get("lm_ffn");
  c.validate();
  return c;
}

// ---- model ------------------------------------------------------------------------

CausalLM::CausalLM(const CausalLMConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const double sd = config_.init_std;
  store_.add("lm.token_embedding", random_normal(config_.vocab_size, config_.width, sd, rng));
  store_.add("lm.position_embedding", random_normal(config_.max_positions, config_.width, sd, rng));
  store_.add("lm.output_bias", Matrix::Zero(1, config_.vocab_size));
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "lm.block" + std::to_string(l);
    LayerNorm::create(store_, p + ".attention_norm", config_.width);
    MultiHeadAttention::create(store_, p + ".attention", config_.width, config_.heads, rng, sd);
    LayerNorm::create(store_, p + ".ffn_norm", config_.width);
    Linear::create(store_, p + ".ffn_in", config_.width, config_.ffn, rng, sd);
    Linear::create(store_, p + ".ffn_out", config_.ffn, config_.width, rng, sd);
  }
  LayerNorm::create(store_, "lm.final_norm", config_.width);
  bind();
}

CausalLM::CausalLM(const CausalLM& other) : config_(other.config_), store_(other.store_) { bind(); }

CausalLM& CausalLM::operator=(const CausalLM& other) {
  if (this != &other) {
    config_ = other.config_;
    store_ = other.store_;
    bind();
  }
  return *this;
}

void CausalLM::bind() {
  tokens_ = &store_.get("lm.token_embedding");
  positions_ = &store_.get("lm.position_embedding");
  output_bias_ = &store_.get("lm.output_bias");
  blocks_.clear();
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "lm.block" + std::to_string(l);
    blocks_.push_back({LayerNorm::bind(store_, p + ".attention_norm"),
                       MultiHeadAttention::bind(store_, p + ".attention", config_.heads),
                       LayerNorm::bind(store_, p + ".ffn_norm"), Linear::bind(store_, p + ".ffn_in"),
                       Linear::bind(store_, p + ".ffn_out")});
  }
  final_norm_ = LayerNorm::bind(store_, "lm.final_norm");
}

Var CausalLM::logits(Tape& t, const std::vector<int>& ids) const {
  const auto n = static_cast<Eigen::Index>(ids.size());
  if (n == 0) throw std::invalid_argument("language model: empty input");
  if (n > config_.max_positions)
    throw std::invalid_argument("language model: " + std::to_string(n) + " tokens exceed max_positions " +
                                std::to_string(config_.max_positions));
  std::vector<int> pos(ids.size());
  std::iota(pos.begin(), pos.end(), 0);
  Var emb = t.param(*tokens_);
  Var x = add(gather_rows(emb, ids), gather_rows(t.param(*positions_), pos));
  const Matrix mask = causal_bias(n);
  for (const Block& b : blocks_) {
    x = add(x, b.attention(t, b.attention_norm(t, x), &mask));
    x = add(x, b.ffn_out(t, gelu(b.ffn_in(t, b.ffn_norm(t, x)))));
  }
  return add_row(matmul_nt(final_norm_(t, x), emb), t.param(*output_bias_));
}

Matrix CausalLM::logits(const std::vector<int>& ids) const {
  Tape t;
  return logits(t, ids).value();
}

std::vector<int> lm_sequence(std::string_view text, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 2) throw std::invalid_argument("lm_sequence: max_len must be at least 2");
  std::vector<int> ids{vocab.end_id()};
  const auto body = encode(text, vocab);
  ids.insert(ids.end(), body.begin(), body.end());
  if (ids.size() + 1 > max_len) ids.resize(max_len - 1);
  ids.push_back(vocab.end_id());
  return ids;
}

Var lm_nll(Tape& t, const CausalLM& model, const std::vector<int>& sequence, int pad_id) {
  if (sequence.size() < 2) throw std::invalid_argument("lm_nll: sequence needs at least two tokens");
  const std::vector<int> inputs(sequence.begin(), sequence.end() - 1);
  std::vector<int> targets(sequence.begin() + 1, sequence.end());
  for (int& id : targets)
    if (id == pad_id) id = -1;
  return sequence_nll(model.logits(t, inputs), targets);
}

double lm_nll(const CausalLM& model, const std::vector<int>& sequence, int pad_id) {
  Tape t;
  return lm_nll(t, model, sequence, pad_id).scalar();
}

double perplexity(const CausalLM& model, const std::vector<std::vector<int>>& corpus, int pad_id) {
  if (corpus.empty()) throw std::invalid_argument("perplexity: empty corpus");
  // Token-weighted: each sequence's mean NLL is scaled back by its target count.
  double sum = 0.0;
  std::size_t tokens = 0;
  for (const auto& s : corpus) {
    const auto n = static_cast<std::size_t>(
        std::count_if(s.begin() + 1, s.end(), [pad_id](int id) { return id != pad_id; }));
    if (n == 0) continue;
    sum += lm_nll(model, s, pad_id) * static_cast<double>(n);
    tokens += n;
  }
  if (tokens == 0) throw std::invalid_argument("perplexity: no target tokens");
  return std::exp(sum / static_cast<double>(tokens));
}

// ---- training ---------------------------------------------------------------------

LMTrainResult train_lm(const CausalLM& init, const std::vector<std::vector<int>>& train,
                       const std::vector<std::vector<int>>& heldout, const TrainConfig& config) {
  if (train.empty()) throw std::invalid_argument("train_lm: empty training set");
  if (heldout.empty()) throw std::invalid_argument("train_lm: empty held-out set");
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const long total = static_cast<long>((train.size() + batch - 1) / batch) * config.max_epochs;
  const long warmup = std::min<long>(config.warmup_steps, total);
  if (warmup < config.warmup_steps)
    spdlog::info("warm-up of {} steps clamped to the {}-step run", config.warmup_steps, total);

  LMTrainResult r;
  CausalLM model = init;
  AdamW opt(model.params());
  r.model = init;
  r.initial_perplexity = r.best_perplexity = perplexity(init, heldout);
  long step = 0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    stable_shuffle(order, derive_seed(config.seed, "lm-shuffle/" + std::to_string(epoch)));
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      model.params().zero_grad();
      for (std::size_t k = start; k < stop; ++k) {
        Tape t;
        Var loss = lm_nll(t, model, train[order[k]]);
        if (!std::isfinite(loss.scalar()))
          throw std::runtime_error("non-finite language model loss at step " + std::to_string(step));
        t.backward(loss, 1.0 / static_cast<double>(stop - start));
      }
      opt.step(model.params(), lr_schedule(step, warmup, total, config.learning_rate), config.weight_decay);
      ++step;
    }
    const double ppl = perplexity(model, heldout);
    r.heldout_history.push_back(ppl);
    spdlog::info("lm epoch {} step {} held-out perplexity {:.4f}", epoch, step, ppl);
    if (ppl < r.best_perplexity) {
      r.best_perplexity = ppl;
      r.best_epoch = epoch;
      r.model = model;
    }
    if (config.early_stopping && early_stop(r.heldout_history, config.patience)) break;
  }
  r.steps = step;
  return r;
}

std::vector<std::string> relation_texts(const std::vector<PairInstance>& instances, RelationLabel label) {
  std::vector<std::string> out;
  for (const auto& inst : instances)
    if (inst.label == label) out.push_back(mark_entities(inst.text, inst.e1, inst.e2));
  return out;
}

std::vector<RelationModel> finetune_per_relation(const CausalLM& base, const std::vector<PairInstance>& corpus,
                                                 const Vocab& vocab, const TrainConfig& config,
                                                 double heldout_fraction, std::size_t max_len) {
  if (heldout_fraction <= 0 || heldout_fraction >= 1)
    throw std::invalid_argument("held-out fraction must lie in (0, 1)");
  std::vector<RelationModel> out;
  for (RelationLabel label : kAllLabels) {
    if (!is_positive(label)) continue;
    const std::string name(to_string(label));
    const auto texts = relation_texts(corpus, label);
    if (texts.size() < 2)
      throw std::invalid_argument("relation '" + name + "' has " + std::to_string(texts.size()) +
                                  " sentences; at least 2 are needed to fine-tune");
    std::vector<std::size_t> order(texts.size());
    std::iota(order.begin(), order.end(), 0);
    stable_shuffle(order, derive_seed(config.seed, "heldout/" + name));
    const auto n_held = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(heldout_fraction * static_cast<double>(texts.size()))), 1,
        texts.size() - 1);
    std::vector<std::vector<int>> train, held;
    for (std::size_t i = 0; i < order.size(); ++i)
      (i < n_held ? held : train).push_back(lm_sequence(texts[order[i]], vocab, max_len));
    TrainConfig c = config;
    c.seed = derive_seed(config.seed, "finetune/" + name);
    spdlog::info("fine-tuning '{}' on {} sentences ({} held out)", name, train.size(), held.size());
    out.push_back({label, train_lm(base, train, held, c)});
  }
  return out;
}

// ---- sampling ---------------------------------------------------------------------

std::vector<int> sample_ids(const CausalLM& model, const Vocab& vocab, const SampleConfig& config) {
  if (config.max_len < 1) throw std::invalid_argument("sample: max_len must be at least 1");
  SplitMix64 rng(config.seed);
  std::vector<int> ids{vocab.end_id()};
  std::vector<int> out;
  while (static_cast<int>(out.size()) < config.max_len &&
         static_cast<int>(ids.size()) < model.config().max_positions) {
    const RowVector z = model.logits(ids).bottomRows(1);
    int next = 0;
    if (config.temperature <= 1e-6) {
      Eigen::Index best = 0;
      z.maxCoeff(&best);
      next = static_cast<int>(best);
    } else {
      RowVector scaled = z / config.temperature;
      if (config.top_k > 0 && config.top_k < scaled.cols()) {
        std::vector<double> sorted(scaled.data(), scaled.data() + scaled.cols());
        std::nth_element(sorted.begin(), sorted.begin() + (config.top_k - 1), sorted.end(), std::greater<>());
        const double cutoff = sorted[static_cast<std::size_t>(config.top_k - 1)];
        for (Eigen::Index i = 0; i < scaled.cols(); ++i)
          if (scaled(i) < cutoff) scaled(i) = -std::numeric_limits<double>::infinity();
      }
      const RowVector p = softmax(scaled);
      double u = rng.uniform();
      next = static_cast<int>(p.cols() - 1);
      for (Eigen::Index i = 0; i < p.cols(); ++i) {
        u -= p(i);
        if (u < 0) {
          next = static_cast<int>(i);
          break;
        }
      }
    }
    if (next == vocab.end_id()) break;
    ids.push_back(next);
    out.push_back(next);
  }
  return out;
}

std::string sample(const CausalLM& model, const Vocab& vocab, const SampleConfig& config) {
  return detokenize(sample_ids(model, vocab, config), vocab);
}

void save_lm(const fs::path& dir, const CausalLM& model, const Vocab& vocab, const KeyValues& extra) {
  fs::create_directories(dir);
  KeyValues kv = model.config().to_key_values();
  for (const auto& [k, v] : extra) kv[k] = v;
  kv["vocab_fingerprint"] = vocab.fingerprint();
  write_key_values(dir / "config.txt", kv);
  vocab.save(dir / "vocab.txt");
  write_tensors(dir, snapshot(model.params()));
}

LoadedLM load_lm(const fs::path& dir) {
  if (!fs::exists(dir / "config.txt")) throw CheckpointError("no language model checkpoint at " + dir.string());
  LoadedLM out;
  out.config = read_key_values(dir / "config.txt");
  out.vocab = Vocab::load(dir / "vocab.txt");
  if (auto it = out.config.find("vocab_fingerprint"); it == out.config.end() || it->second != out.vocab.fingerprint())
    throw CheckpointError(dir.string() + ": vocabulary does not match its recorded fingerprint");
  out.model = CausalLM(CausalLMConfig::from_key_values(out.config), 0);
  assign(out.model.params(), read_tensors(dir));
  return out;
}

// ---- lexicon and filter -----------------------------------------------------------

void DrugLexicon::add(std::string_view surface, DrugType type, std::size_t count) {
  votes_[casefold(surface)][std::string(to_string(type))] += count;
}

DrugLexicon DrugLexicon::from_records(const std::vector<SentenceRecord>& records) {
  DrugLexicon lex;
  for (const auto& r : records)
    for (const auto& e : r.entities) lex.add(e.surface, e.type);
  return lex;
}

DrugLexicon DrugLexicon::from_instances(const std::vector<PairInstance>& instances) {
  DrugLexicon lex;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& inst : instances)
    for (const EntityMention* e : {&inst.e1, &inst.e2})
      if (seen.emplace(inst.sentence_id, e->id).second) lex.add(e->surface, e->type);
  return lex;
}

std::optional<DrugType> DrugLexicon::lookup(std::string_view surface) const {
  auto it = votes_.find(casefold(surface));
  if (it == votes_.end()) return std::nullopt;
  const std::string* best = nullptr;
  std::size_t best_count = 0;
  for (const auto& [type, count] : it->second)  // name order, so ties keep the smaller name
    if (count > best_count) {
      best = &type;
      best_count = count;
    }
  return parse_drug_type(*best);
}

namespace {

const std::regex& marker_like() {
  static const std::regex re("</?e[0-9]+>");
  return re;
}

/// Whitespace words with marker-like tokens split out even when glued.
std::vector<std::string> filter_tokens(std::string_view text) {
  const std::string spaced = std::regex_replace(std::string(text), marker_like(), " $& ");
  std::istringstream in(spaced);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

bool is_marker_token(const std::string& w) { return std::regex_match(w, marker_like()); }

FilterVerdict fail(const char* rule) { return {false, rule, std::nullopt}; }

}  // namespace

FilterVerdict filter_generated(std::string_view text, const DrugLexicon& lexicon) {
  const auto tokens = filter_tokens(text);
  std::size_t words = 0, markers = 0, opens = 0;
  for (const auto& w : tokens) {
    if (is_marker_token(w)) {
      ++markers;
      if (w[1] != '/') ++opens;
    } else {
      ++words;
    }
  }
  if (words < 5) return fail("R1");
  if (markers == 0) return fail("R2");
  if (opens == 1) return fail("R3");
  if (opens > 2) return fail("R4");

  // Structure: exactly <e1t> ... </e1t> and <e2t> ... </e2t>, unnested.
  struct Span {
    int type_index = -1;
    std::string surface;
  };
  std::optional<Span> spans[2];
  std::string open_marker;
  std::string surface;
  for (const auto& w : tokens) {
    if (!is_marker_token(w)) {
      if (!open_marker.empty()) surface += (surface.empty() ? "" : " ") + w;
      continue;
    }
    const bool closing = w[1] == '/';
    const std::string digits = w.substr(closing ? 3 : 2, w.size() - (closing ? 4 : 3));
    if (digits.size() != 2 || (digits[0] != '1' && digits[0] != '2') || digits[1] < '0' || digits[1] > '3')
      return fail("R5");
    if (!closing) {
      if (!open_marker.empty()) return fail("R5");
      open_marker = w;
      surface.clear();
      continue;
    }
    if (open_marker.empty() || open_marker.substr(1) != w.substr(2) || surface.empty()) return fail("R5");
    const int entity = digits[0] - '1';
    if (spans[entity]) return fail("R5");
    spans[entity] = Span{digits[1] - '0', surface};
    open_marker.clear();
  }
  if (!open_marker.empty() || !spans[0] || !spans[1]) return fail("R5");

  ExtractedPair pair;
  for (int e = 0; e < 2; ++e) {
    const auto marked = drug_type_from_marker_index(spans[e]->type_index);
    const auto known = lexicon.lookup(spans[e]->surface);
    if (!marked || !known || *marked != *known) return fail("R5");
    (e == 0 ? pair.drug1 : pair.drug2) = spans[e]->surface;
    (e == 0 ? pair.type1 : pair.type2) = *marked;
  }
  return {true, "", pair};
}

void PairIndex::add(std::string_view a, std::string_view b) {
  std::string x = casefold(a), y = casefold(b);
  if (y < x) std::swap(x, y);
  pairs_.emplace(std::move(x), std::move(y));
}

PairIndex PairIndex::from_instances(const std::vector<PairInstance>& instances) {
  PairIndex idx;
  for (const auto& inst : instances) idx.add(inst.e1.surface, inst.e2.surface);
  return idx;
}

bool PairIndex::contains(std::string_view a, std::string_view b) const {
  std::string x = casefold(a), y = casefold(b);
  if (y < x) std::swap(x, y);
  return pairs_.count({x, y}) > 0;
}

bool novelty_check(const ExtractedPair& pair, const PairIndex& index) { return !index.contains(pair.drug1, pair.drug2); }

// ---- candidates -------------------------------------------------------------------

std::string GeneratedCandidate::to_json_line() const {
  nlohmann::json j;
  j["text"] = text;
  j["relation"] = std::string(to_string(relation));
  if (verdict) {
    j["verdict"] = verdict->pass ? "pass" : "fail";
    j["rule"] = verdict->rule;
    if (verdict->pair) {
      j["drug1"] = verdict->pair->drug1;
      j["type1"] = std::string(to_string(verdict->pair->type1));
      j["drug2"] = verdict->pair->drug2;
      j["type2"] = std::string(to_string(verdict->pair->type2));
    }
  } else {
    j["verdict"] = nullptr;
    j["rule"] = nullptr;
  }
  j["novel"] = novel;
  j["score"] = score ? nlohmann::json(*score) : nlohmann::json(nullptr);
  j["vocab"] = vocab_fingerprint;
  return j.dump();
}

GeneratedCandidate GeneratedCandidate::from_json_line(const std::string& line, std::size_t line_number) {
  try {
    const auto j = nlohmann::json::parse(line);
    GeneratedCandidate c;
    c.text = j.at("text").get<std::string>();
    c.relation = parse_label(j.at("relation").get<std::string>());
    if (j.contains("verdict") && !j["verdict"].is_null()) {
      FilterVerdict v;
      v.pass = j["verdict"].get<std::string>() == "pass";
      v.rule = j.value("rule", "");
      if (j.contains("drug1"))
        v.pair = ExtractedPair{j["drug1"].get<std::string>(), parse_drug_type(j["type1"].get<std::string>()),
                               j["drug2"].get<std::string>(), parse_drug_type(j["type2"].get<std::string>())};
      c.verdict = v;
    }
    c.novel = j.value("novel", false);
    if (j.contains("score") && !j["score"].is_null()) c.score = j["score"].get<double>();
    c.vocab_fingerprint = j.value("vocab", "");
    return c;
  } catch (const std::exception& e) {
    throw std::runtime_error("candidate line " + std::to_string(line_number) + ": " + e.what());
  }
}

void write_candidates(const fs::path& path, const std::vector<GeneratedCandidate>& candidates) {
  std::string out;
  for (const auto& c : candidates) out += c.to_json_line() + "\n";
  write_file_atomic(path, out);
}

std::vector<GeneratedCandidate> read_candidates(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open");
  std::vector<GeneratedCandidate> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty()) out.push_back(GeneratedCandidate::from_json_line(line, n));
  }
  return out;
}

void filter_candidates(std::vector<GeneratedCandidate>& candidates, const DrugLexicon& lexicon,
                       const PairIndex& training_pairs) {
  for (auto& c : candidates) {
    c.verdict = filter_generated(c.text, lexicon);
    c.novel = c.verdict->pair && novelty_check(*c.verdict->pair, training_pairs);
    c.score.reset();
  }
}

std::string anonymize_marked(std::string_view marked_text) {
  static const std::regex span("<e([12])([0-3])>\\s*(.*?)\\s*</e\\1\\2>");
  return std::regex_replace(std::string(marked_text), span, "<e$1$2> drug$1 </e$1$2>");
}

std::map<RelationLabel, std::vector<RankedRow>> rank_candidates(std::vector<GeneratedCandidate>& candidates,
                                                                const Checkpoint& classifier, std::size_t k,
                                                                bool novel_only) {
  const std::string fp = classifier.vocab.fingerprint();
  for (const auto& c : candidates)
    if (c.vocab_fingerprint != fp)
      throw std::invalid_argument("vocabulary mismatch: candidate vocabulary " +
                                  (c.vocab_fingerprint.empty() ? std::string("<none>") : c.vocab_fingerprint) +
                                  " vs classifier vocabulary " + fp);
  std::map<RelationLabel, std::vector<RankedRow>> tables;
  for (auto& c : candidates) {
    c.score.reset();
    if (!c.verdict || !c.verdict->pass || !c.verdict->pair) continue;
    try {
      const auto input = tokenize(anonymize_marked(c.text), classifier.vocab);
      c.score = forward_full(input, classifier.model).probs(label_index(c.relation));
    } catch (const TokenizerError& e) {
      spdlog::warn("cannot score candidate '{}': {}", c.text, e.what());
      continue;
    }
    if (c.relation == RelationLabel::interaction || (novel_only && !c.novel)) continue;
    const auto& p = *c.verdict->pair;
    tables[c.relation].push_back({c.text, p.drug1, std::string(to_string(p.type1)), p.drug2,
                                  std::string(to_string(p.type2)), c.relation, *c.score});
  }
  for (auto& [label, rows] : tables) {
    std::sort(rows.begin(), rows.end(), [](const RankedRow& a, const RankedRow& b) {
      return a.score != b.score ? a.score > b.score : a.sentence < b.sentence;
    });
    if (rows.size() > k) rows.resize(k);
  }
  return tables;
}

std::string ranked_tsv(const std::map<RelationLabel, std::vector<RankedRow>>& tables) {
  std::string out = "sentence\tdrug1\ttype1\tdrug2\ttype2\trelation\tscore\n";
  for (const auto& [label, rows] : tables)
    for (const auto& r : rows)
      out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{:.6f}\n", r.sentence, r.drug1, r.type1, r.drug2, r.type2,
                         to_string(r.relation), r.score);
  return out;
}

}  // namespace egfi

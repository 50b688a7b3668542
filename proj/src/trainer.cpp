// SPDX-License-Identifier: Apache-2.0
#include "egfi/trainer.hpp"

#include "egfi/random.hpp"

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace egfi {

namespace fs = std::filesystem;

namespace {

std::string num(double v) { return fmt::format("{}", v); }

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::logic_error&) {
    throw std::invalid_argument("config key '" + key + "': '" + v + "' is not a number");
  }
}

long parse_long(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long d = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::logic_error&) {
    throw std::invalid_argument("config key '" + key + "': '" + v + "' is not an integer");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<double> parse_grid(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (!item.empty()) out.push_back(parse_double(key, item));
  }
  return out;
}

}  // namespace

// ---- config ---------------------------------------------------------------------

TrainConfig TrainConfig::dti() {
  TrainConfig c;
  c.learning_rate = 1e-5;
  c.max_epochs = 5;
  return c;
}

TrainConfig TrainConfig::generation() {
  TrainConfig c;
  c.learning_rate = 3e-5;
  c.warmup_steps = 300;
  c.batch_size = 16;
  c.max_epochs = 5;
  c.early_stopping = true;
  return c;
}

void TrainConfig::validate() const {
  if (learning_rate <= 0) throw std::invalid_argument("learning_rate must be positive");
  if (batch_size < 1 || max_epochs < 1) throw std::invalid_argument("batch_size and max_epochs must be at least 1");
  if (warmup_steps < 0 || total_steps < 0) throw std::invalid_argument("step counts must be nonnegative");
  if (total_steps > 0 && warmup_steps > total_steps)
    throw std::invalid_argument("warmup_steps (" + std::to_string(warmup_steps) + ") exceeds total_steps (" +
                                std::to_string(total_steps) + ")");
  if (patience < 1) throw std::invalid_argument("patience must be at least 1");
  if (weight_decay < 0) throw std::invalid_argument("weight_decay must be nonnegative");
  if (gru_dropout < 0 || gru_dropout >= 1 || fc_dropout < 0 || fc_dropout >= 1)
    throw std::invalid_argument("dropout rates must lie in [0, 1)");
  for (double r : grid)
    if (r <= 0) throw std::invalid_argument("grid rates must be positive");
}

int TrainConfig::resolve_total_steps(std::size_t train_size) const {
  if (total_steps > 0) return total_steps;
  const auto per_epoch = (train_size + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size);
  const int total = static_cast<int>(per_epoch) * max_epochs;
  if (warmup_steps > total)
    throw std::invalid_argument("warmup_steps (" + std::to_string(warmup_steps) + ") exceeds total steps (" +
                                std::to_string(total) + ")");
  return total;
}

KeyValues TrainConfig::to_key_values() const {
  std::string g;
  for (std::size_t i = 0; i < grid.size(); ++i) g += (i ? "," : "") + num(grid[i]);
  return {{"learning_rate", num(learning_rate)},
          {"warmup_steps", std::to_string(warmup_steps)},
          {"batch_size", std::to_string(batch_size)},
          {"max_epochs", std::to_string(max_epochs)},
          {"head_heads", std::to_string(heads)},
          {"dropout_gru", num(gru_dropout)},
          {"dropout_fc", num(fc_dropout)},
          {"seed", std::to_string(seed)},
          {"total_steps", std::to_string(total_steps)},
          {"patience", std::to_string(patience)},
          {"early_stopping", early_stopping ? "true" : "false"},
          {"weight_decay", num(weight_decay)},
          {"grid", g},
          {"class_weighting", class_weighting ? "true" : "false"},
          {"loss_floor", num(loss_floor)},
          {"include_negative_in_micro", include_negative_in_micro ? "true" : "false"}};
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv, TrainConfig c) {
  for (const auto& [k, v] : kv) {
    if (k == "learning_rate") c.learning_rate = parse_double(k, v);
    else if (k == "warmup_steps") c.warmup_steps = static_cast<int>(parse_long(k, v));
    else if (k == "batch_size") c.batch_size = static_cast<int>(parse_long(k, v));
    else if (k == "max_epochs") c.max_epochs = static_cast<int>(parse_long(k, v));
    else if (k == "head_heads") c.heads = static_cast<int>(parse_long(k, v));
    else if (k == "dropout_gru") c.gru_dropout = parse_double(k, v);
    else if (k == "dropout_fc") c.fc_dropout = parse_double(k, v);
    else if (k == "seed") c.seed = static_cast<std::uint64_t>(parse_long(k, v));
    else if (k == "total_steps") c.total_steps = static_cast<int>(parse_long(k, v));
    else if (k == "patience") c.patience = static_cast<int>(parse_long(k, v));
    else if (k == "early_stopping") c.early_stopping = parse_bool(k, v);
    else if (k == "weight_decay") c.weight_decay = parse_double(k, v);
    else if (k == "grid") c.grid = parse_grid(k, v);
    else if (k == "class_weighting") c.class_weighting = parse_bool(k, v);
    else if (k == "loss_floor") c.loss_floor = parse_double(k, v);
    else if (k == "include_negative_in_micro") c.include_negative_in_micro = parse_bool(k, v);
  }
  return c;
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) { return from_key_values(kv, TrainConfig{}); }

// ---- loss and schedule ------------------------------------------------------------

ClassWeights class_weights(const std::vector<std::size_t>& counts) {
  if (counts.empty()) throw std::invalid_argument("class_weights: no classes");
  ClassWeights w;
  w.counts = counts;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) throw std::invalid_argument("class_weights: class " + std::to_string(i) + " has zero count");
    w.total += counts[i];
  }
  const double n = static_cast<double>(counts.size());
  for (std::size_t c : counts) w.weights.push_back(static_cast<double>(w.total) / (n * static_cast<double>(c)));
  return w;
}

double weighted_ce(const std::vector<RowVector>& probs, const std::vector<int>& targets,
                   const std::vector<double>& weights, double floor, std::uint64_t* clamped) {
  if (probs.empty() || probs.size() != targets.size())
    throw std::invalid_argument("weighted_ce: probs/targets size mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const int t = targets[i];
    if (t < 0 || t >= probs[i].cols() || static_cast<std::size_t>(t) >= weights.size())
      throw std::out_of_range("weighted_ce: target out of range");
    double p = probs[i](t);
    if (p < floor) {
      p = floor;
      if (clamped != nullptr) ++*clamped;
    }
    sum += -weights[static_cast<std::size_t>(t)] * std::log(p);
  }
  return sum / static_cast<double>(probs.size());
}

double lr_schedule(long step, long warmup, long total, double peak) {
  if (warmup < 0 || warmup > total)
    throw std::invalid_argument("lr_schedule: warmup " + std::to_string(warmup) + " outside [0, total " +
                                std::to_string(total) + "]");
  if (step < 0 || step > total) throw std::out_of_range("lr_schedule: step outside [0, total]");
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (total == warmup) return step == total ? 0.0 : peak;
  return peak * static_cast<double>(total - step) / static_cast<double>(total - warmup);
}

bool early_stop(const std::vector<double>& history, int patience) {
  if (patience < 1) throw std::invalid_argument("early_stop: patience must be at least 1");
  if (history.size() < static_cast<std::size_t>(patience) + 1) return false;
  for (std::size_t i = history.size() - static_cast<std::size_t>(patience); i < history.size(); ++i)
    if (!(history[i] > history[i - 1])) return false;
  return true;
}

// ---- optimizer ------------------------------------------------------------------

AdamW::AdamW(const ParamStore& store) {
  for (const auto& p : store) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::step(ParamStore& store, double rate, double decay) {
  if (m_.size() != store.size()) throw std::invalid_argument("AdamW: optimizer state does not match the store");
  for (const auto& p : store)
    if (!p->grad.allFinite()) throw std::runtime_error("non-finite gradient in " + p->name);
  ++step_;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
  std::size_t i = 0;
  for (auto& p : store) {
    Matrix& m = m_[i];
    Matrix& v = v_[i];
    ++i;
    if (decay != 0.0) p->value *= 1.0 - rate * decay;
    m = beta1 * m + (1.0 - beta1) * p->grad;
    v = beta2 * v + (1.0 - beta2) * p->grad.cwiseProduct(p->grad);
    p->value.array() -= rate * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

// ---- data -----------------------------------------------------------------------

std::vector<Example> prepare_examples(const std::vector<PairInstance>& instances, const Vocab& vocab,
                                      std::size_t max_len, std::size_t* dropped) {
  std::vector<Example> out;
  out.reserve(instances.size());
  std::size_t skipped = 0;
  for (const auto& inst : instances) {
    try {
      out.push_back({inst.instance_id, tokenize(inst.enriched_text, vocab, max_len), label_index(inst.label)});
    } catch (const TokenizerError& e) {
      ++skipped;
      spdlog::warn("skipping {}: {}", inst.instance_id, e.what());
    }
  }
  if (dropped != nullptr) *dropped = skipped;
  return out;
}

std::vector<std::size_t> label_counts(const std::vector<Example>& examples) {
  std::vector<std::size_t> counts(kNumLabels, 0);
  for (const auto& e : examples) ++counts.at(static_cast<std::size_t>(e.label));
  return counts;
}

RelationClassifier ModelSpec::build(std::uint64_t seed) const {
  if (pretrained) return RelationClassifier(*pretrained, head, seed);
  return RelationClassifier(encoder, head, seed);
}

// ---- checkpoints ----------------------------------------------------------------

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  fs::create_directories(dir);
  KeyValues kv = ckpt.config.to_key_values();
  for (const auto& [k, v] : ckpt.model.encoder_config().to_key_values()) kv["encoder_" + k] = v;
  for (const auto& [k, v] : ckpt.model.head_config().to_key_values()) kv[k] = v;
  kv["step"] = std::to_string(ckpt.step);
  kv["optimizer_steps"] = std::to_string(ckpt.optimizer.steps());
  kv["best_epoch"] = std::to_string(ckpt.best_epoch);
  kv["vocab_fingerprint"] = ckpt.vocab.fingerprint();
  write_key_values(dir / "config.txt", kv);
  ckpt.vocab.save(dir / "vocab.txt");
  write_tensors(dir, snapshot(ckpt.model.params()));

  std::vector<NamedMatrix> moments;
  std::size_t i = 0;
  for (const auto& p : ckpt.model.params()) {
    if (i < ckpt.optimizer.first_moments().size()) {
      moments.push_back({"m." + p->name, ckpt.optimizer.first_moments()[i]});
      moments.push_back({"v." + p->name, ckpt.optimizer.second_moments()[i]});
    }
    ++i;
  }
  write_tensors(dir, moments, "moments.tsv", "moments");

  std::string hist = "epoch,step,train_loss,dev_loss,dev_micro_f1\n";
  for (const auto& h : ckpt.history)
    hist += fmt::format("{},{},{},{},{}\n", h.epoch, h.step, h.train_loss, h.dev_loss, h.dev_micro_f1);
  write_file_atomic(dir / "history.csv", hist);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir / "config.txt")) throw CheckpointError("no checkpoint at " + dir.string());
  const KeyValues kv = read_key_values(dir / "config.txt");
  KeyValues enc_kv;
  for (const auto& [k, v] : kv)
    if (k.rfind("encoder_", 0) == 0) enc_kv[k.substr(8)] = v;
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw CheckpointError(dir.string() + ": config is missing '" + key + "'");
    return it->second;
  };

  Checkpoint c;
  c.config = TrainConfig::from_key_values(kv);
  c.vocab = Vocab::load(dir / "vocab.txt");
  if (c.vocab.fingerprint() != get("vocab_fingerprint"))
    throw CheckpointError(dir.string() + ": vocabulary does not match its recorded fingerprint");
  c.model = RelationClassifier(EncoderConfig::from_key_values(enc_kv), FusionConfig::from_key_values(kv), 0);
  assign(c.model.params(), read_tensors(dir));
  c.step = std::stol(get("step"));
  c.best_epoch = static_cast<int>(std::stol(get("best_epoch")));

  c.optimizer = AdamW(c.model.params());
  if (fs::exists(dir / "moments.tsv")) {
    const auto moments = read_tensors(dir, "moments.tsv", "moments");
    std::size_t i = 0;
    for (const auto& p : c.model.params()) {
      for (const auto& nm : moments) {
        if (nm.name == "m." + p->name) c.optimizer.first_moments()[i] = nm.value;
        if (nm.name == "v." + p->name) c.optimizer.second_moments()[i] = nm.value;
      }
      ++i;
    }
    c.optimizer.set_steps(std::stol(get("optimizer_steps")));
  }

  if (std::ifstream in(dir / "history.csv"); in) {
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      EpochRecord r;
      char sep = 0;
      std::istringstream row(line);
      row >> r.epoch >> sep >> r.step >> sep >> r.train_loss >> sep >> r.dev_loss >> sep >> r.dev_micro_f1;
      if (!row) throw CheckpointError(dir.string() + "/history.csv: malformed row '" + line + "'");
      c.history.push_back(r);
    }
  }
  return c;
}

// ---- prediction -----------------------------------------------------------------

std::vector<Prediction> predict(const RelationClassifier& model, const std::vector<Example>& examples) {
  std::vector<Prediction> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const FusionOutput f = forward_full(ex.input, model);
    Eigen::Index best = 0;
    f.probs.maxCoeff(&best);
    out.push_back({static_cast<int>(best), f.probs});
  }
  return out;
}

MetricsReport evaluate(const RelationClassifier& model, const std::vector<Example>& examples, bool include_negative) {
  ConfusionMatrix cm(static_cast<int>(kNumLabels));
  const auto preds = predict(model, examples);
  for (std::size_t i = 0; i < examples.size(); ++i) cm.add(examples[i].label, preds[i].label);
  return make_report(cm, include_negative);
}

// ---- training -------------------------------------------------------------------

namespace {

struct DevScore {
  double loss = 0.0;
  double micro_f1 = 0.0;
};

DevScore score_dev(const RelationClassifier& model, const std::vector<Example>& dev, bool include_negative) {
  if (dev.empty()) return {};
  ConfusionMatrix cm(static_cast<int>(kNumLabels));
  std::vector<RowVector> probs;
  std::vector<int> targets;
  for (const auto& p : predict(model, dev)) probs.push_back(p.probs);
  for (std::size_t i = 0; i < dev.size(); ++i) {
    Eigen::Index best = 0;
    probs[i].maxCoeff(&best);
    cm.add(dev[i].label, static_cast<int>(best));
    targets.push_back(dev[i].label);
  }
  const std::vector<double> ones(kNumLabels, 1.0);
  return {weighted_ce(probs, targets, ones), micro_prf(cm, include_negative).f1};
}

}  // namespace

TrainResult train_classifier(const std::vector<Example>& train, const std::vector<Example>& dev,
                             const TrainConfig& config, const ModelSpec& spec, const Vocab& vocab,
                             std::ostream* step_log) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("train_classifier: empty training set");

  std::vector<double> weights(kNumLabels, 1.0);
  if (config.class_weighting) {
    auto counts = label_counts(train);
    // Labels absent from training keep weight 1 rather than failing the run.
    std::vector<std::size_t> present;
    for (std::size_t c : counts)
      if (c > 0) present.push_back(c);
    const auto w = class_weights(present);
    for (std::size_t i = 0, j = 0; i < counts.size(); ++i)
      if (counts[i] > 0) weights[i] = w.weights[j++];
  }

  FusionConfig head = spec.head;
  head.heads = config.heads;
  head.gru_dropout = config.gru_dropout;
  head.fc_dropout = config.fc_dropout;
  ModelSpec run_spec{spec.encoder, head, spec.pretrained};

  RelationClassifier model = run_spec.build(derive_seed(config.seed, "init"));
  AdamW optimizer(model.params());
  std::mt19937_64 dropout_rng(derive_seed(config.seed, "dropout"));
  const long total = config.resolve_total_steps(train.size());
  const auto batch = static_cast<std::size_t>(config.batch_size);

  TrainResult result;
  result.best.config = config;
  result.best.vocab = vocab;
  double best_f1 = -1.0;
  std::vector<double> dev_losses;
  long step = 0;
  if (step_log != nullptr) *step_log << "step,lr,loss\n";

  for (int epoch = 1; epoch <= config.max_epochs && step < total; ++epoch) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    stable_shuffle(order, derive_seed(config.seed, "shuffle/" + std::to_string(epoch)));
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size() && step < total; start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      model.params().zero_grad();
      double batch_loss = 0.0;
      for (std::size_t k = start; k < stop; ++k) {
        const Example& ex = train[order[k]];
        Tape t;
        const auto tr = model.forward(t, ex.input, &dropout_rng);
        Var loss = weighted_nll(tr.logits, ex.label, weights[static_cast<std::size_t>(ex.label)], config.loss_floor,
                                &result.clamped_losses);
        batch_loss += loss.scalar();
        t.backward(loss, 1.0 / static_cast<double>(stop - start));
      }
      batch_loss /= static_cast<double>(stop - start);
      if (!std::isfinite(batch_loss)) throw std::runtime_error("non-finite training loss at step " + std::to_string(step));
      const double rate = lr_schedule(step, config.warmup_steps, total, config.learning_rate);
      optimizer.step(model.params(), rate, config.weight_decay);
      ++step;
      epoch_loss += batch_loss * static_cast<double>(stop - start);
      seen += stop - start;
      if (step_log != nullptr) *step_log << step << ',' << num(rate) << ',' << num(batch_loss) << '\n';
    }

    const DevScore ds = score_dev(model, dev, config.include_negative_in_micro);
    EpochRecord rec{epoch, step, epoch_loss / static_cast<double>(std::max<std::size_t>(seen, 1)), ds.loss,
                    ds.micro_f1};
    result.best.history.push_back(rec);
    spdlog::info("epoch {} step {} train_loss {:.4f} dev_loss {:.4f} dev_micro_f1 {:.4f}", epoch, step,
                 rec.train_loss, rec.dev_loss, rec.dev_micro_f1);
    if (ds.micro_f1 > best_f1) {
      best_f1 = ds.micro_f1;
      result.best.model = model;
      result.best.optimizer = optimizer;
      result.best.step = step;
      result.best.best_epoch = epoch;
    }
    dev_losses.push_back(ds.loss);
    if (config.early_stopping && early_stop(dev_losses, config.patience)) {
      spdlog::info("early stop after epoch {}", epoch);
      break;
    }
  }
  if (result.clamped_losses > 0)
    spdlog::warn("{} loss terms hit the probability floor {}", result.clamped_losses, config.loss_floor);
  // Keep the in-memory weights identical to what a checkpoint stores.
  round_to_float32(result.best.model.params());
  result.steps = step;
  return result;
}

// ---- grid search ----------------------------------------------------------------

double select_best_rate(const std::vector<GridRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("grid search needs at least one rate");
  const GridRow* best = &rows.front();
  for (const auto& r : rows)
    if (r.dev_micro_f1 > best->dev_micro_f1 ||
        (r.dev_micro_f1 == best->dev_micro_f1 && r.learning_rate < best->learning_rate))
      best = &r;
  return best->learning_rate;
}

GridReport grid_search(const std::vector<Example>& train, const std::vector<Example>& dev, const TrainConfig& config,
                       const ModelSpec& spec, const Vocab& vocab) {
  if (config.grid.empty()) throw std::invalid_argument("grid search needs at least one rate");
  GridReport report;
  for (double rate : config.grid) {
    TrainConfig c = config;
    c.learning_rate = rate;
    const auto r = train_classifier(train, dev, c, spec, vocab);
    double f1 = 0.0;
    for (const auto& h : r.best.history) f1 = std::max(f1, h.dev_micro_f1);
    report.rows.push_back({rate, f1});
  }
  report.best_rate = select_best_rate(report.rows);
  return report;
}

std::string GridReport::to_text() const {
  std::string out = "learning_rate\tdev_micro_f1\n";
  for (const auto& r : rows) out += fmt::format("{}\t{:.6f}\n", r.learning_rate, r.dev_micro_f1);
  out += fmt::format("best\t{}\n", best_rate);
  return out;
}

}  // namespace egfi

// SPDX-License-Identifier: Apache-2.0
// egfi: corpus preparation, training and candidate mining from the command line.

#include "egfi/ablation.hpp"
#include "egfi/config.hpp"
#include "egfi/corpus.hpp"
#include "egfi/generator.hpp"
#include "egfi/metrics.hpp"
#include "egfi/random.hpp"
#include "egfi/synthetic.hpp"
#include "egfi/trainer.hpp"

#include <CLI11.hpp>
#include <spdlog/fmt/fmt.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace egfi;

namespace {

/// Options every command shares: the config file, --set overrides, --seed and
/// typed flags bound to config keys.
struct ConfigOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;

  RunConfig resolve() const {
    RunConfig cfg;
    std::string path = config_path;
    if (path.empty())
      if (const char* env = std::getenv("EGFI_CONFIG"); env != nullptr) path = env;
    if (!path.empty()) cfg.merge_file(path);
    KeyValues overrides;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
      auto trim = [](std::string x) {
        x.erase(0, x.find_first_not_of(' '));
        x.erase(x.find_last_not_of(' ') + 1);
        return x;
      };
      overrides[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
    }
    cfg.merge(overrides, "--set");
    for (const auto& [k, v] : flags) cfg.set(k, v);
    return cfg;
  }
};

std::string default_of(const std::string& key) {
  for (const auto& [k, def] : RunConfig::schema())
    if (k == key) return def.first;
  throw std::logic_error("no config key " + key);
}

void add_common(CLI::App* app, ConfigOptions& opts) {
  app->add_option("--config", opts.config_path, "flat key = value config file (default: $EGFI_CONFIG)");
  app->add_option("--set", opts.sets, "override one config key, key=value (repeatable)");
  app->add_option_function<std::string>(
         "--seed", [&opts](const std::string& v) { opts.flags["seed"] = v; }, "run seed")
      ->default_str(default_of("seed"));
}

void add_key_flag(CLI::App* app, ConfigOptions& opts, const std::string& flag, const std::string& key,
                  const std::string& help) {
  app->add_option_function<std::string>(
         flag, [&opts, key](const std::string& v) { opts.flags[key] = v; }, help)
      ->default_str(default_of(key));
}

std::vector<PairInstance> load_pairs(const std::vector<std::string>& paths) {
  std::vector<PairInstance> out;
  for (const auto& p : paths) {
    auto part = read_jsonl(p);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::vector<PairInstance> instances_of(const std::vector<SentenceRecord>& records, Partition p) {
  std::vector<PairInstance> out;
  for (const auto& r : records) {
    auto v = make_pair_instances(r, p);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, text);
}

Vocab pipeline_vocab(const RunConfig& cfg, const std::string& vocab_path, const std::vector<PairInstance>& train) {
  if (!vocab_path.empty()) return Vocab::load(vocab_path);
  return build_pipeline_vocab(train, static_cast<int>(cfg.get_long("vocab_size")), cfg.get("end_token"));
}

ModelSpec model_spec(const RunConfig& cfg, const Vocab& vocab) {
  ModelSpec spec{cfg.encoder(vocab.size()), cfg.head(), std::nullopt};
  if (const auto& dir = cfg.get("pretrained_encoder"); !dir.empty()) {
    try {
      spec.pretrained = load_pretrained_adapter(dir);
      if (spec.pretrained->config.vocab_size != vocab.size())
        throw std::invalid_argument("pretrained encoder vocabulary size does not match the pipeline vocabulary");
    } catch (const AdapterUnavailable& e) {
      spdlog::warn("{}; using the desk-scale encoder", e.what());
    }
  }
  return spec;
}

std::vector<Example> examples(const std::vector<PairInstance>& pairs, const Vocab& vocab, const RunConfig& cfg) {
  return prepare_examples(pairs, vocab, static_cast<std::size_t>(cfg.get_long("max_len")));
}

/// Passing generated sentences turned into anonymized training pairs, at
/// most ratio * |train| of them.
std::vector<PairInstance> augmentation(const std::string& path, double ratio, std::size_t train_size) {
  std::vector<PairInstance> out;
  if (path.empty() || ratio <= 0) return out;
  const auto limit = static_cast<std::size_t>(ratio * static_cast<double>(train_size));
  std::size_t n = 0;
  for (const auto& c : read_candidates(path)) {
    if (out.size() >= limit) break;
    if (!c.verdict || !c.verdict->pass) continue;
    PairInstance p;
    p.instance_id = "gen#" + std::to_string(n++);
    p.sentence_id = p.instance_id;
    p.text = c.text;
    p.enriched_text = anonymize_marked(c.text);
    p.label = c.relation;
    out.push_back(std::move(p));
  }
  spdlog::info("augmenting with {} generated sentences", out.size());
  return out;
}

// ---- data ---------------------------------------------------------------------------

void register_data(CLI::App& root, std::function<void()>& action) {
  auto* data = root.add_subcommand("data", "corpus parsing and preparation")->require_subcommand(1);

  {
    auto* c = data->add_subcommand("parse", "read DDI-style XML (file or directory) into sentence JSONL");
    auto opts = std::make_shared<ConfigOptions>();
    auto in = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    add_common(c, *opts);
    c->add_option("--in", *in, "XML file or directory")->required();
    c->add_option("--out", *out, "sentence JSONL output")->required();
    c->callback([=, &action] {
      action = [=] {
        opts->resolve();
        const auto records = parse_ddi_xml(*in);
        write_sentences_jsonl(*out, records);
        spdlog::info("parsed {} sentences", records.size());
      };
    });
  }
  {
    auto* c = data->add_subcommand("enrich", "expand sentences into marked, anonymized pair instances");
    auto opts = std::make_shared<ConfigOptions>();
    auto in = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto part = std::make_shared<std::string>("train");
    add_common(c, *opts);
    c->add_option("--in", *in, "sentence JSONL")->required();
    c->add_option("--out", *out, "pair JSONL output")->required();
    c->add_option("--partition", *part, "train|dev|test")->capture_default_str();
    c->callback([=, &action] {
      action = [=] {
        opts->resolve();
        const auto pairs = instances_of(read_sentences_jsonl(*in), parse_partition(*part));
        write_jsonl(*out, pairs);
        spdlog::info("wrote {} pair instances", pairs.size());
      };
    });
  }
  {
    auto* c = data->add_subcommand("filter-negatives", "drop trivially negative pairs");
    auto opts = std::make_shared<ConfigOptions>();
    auto in = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto removed = std::make_shared<std::string>();
    add_common(c, *opts);
    add_key_flag(c, *opts, "--identical", "filter_identical", "rule (a): identical mentions");
    add_key_flag(c, *opts, "--nested", "filter_nested", "rule (b): one mention inside the other");
    add_key_flag(c, *opts, "--coordinate", "filter_coordinate", "rule (c): coordinate drug lists");
    c->add_option("--in", *in, "pair JSONL")->required();
    c->add_option("--out", *out, "kept pairs JSONL")->required();
    c->add_option("--removed", *removed, "optional TSV of removed instance ids and rules");
    c->callback([=, &action] {
      action = [=] {
        const RunConfig cfg = opts->resolve();
        const auto result = filter_negatives(read_jsonl(*in), cfg.negative_filter());
        write_jsonl(*out, result.kept);
        if (!removed->empty()) {
          std::string tsv = "instance_id\trule\n";
          for (const auto& r : result.removed) tsv += r.instance_id + "\t" + std::string(to_string(r.rule)) + "\n";
          write_text(*removed, tsv);
        }
        spdlog::info("kept {} pairs, removed {}", result.kept.size(), result.removed.size());
      };
    });
  }
  {
    auto* c = data->add_subcommand("stats", "print the per-label, per-partition count grid");
    auto opts = std::make_shared<ConfigOptions>();
    auto in = std::make_shared<std::vector<std::string>>();
    auto out = std::make_shared<std::string>();
    add_common(c, *opts);
    c->add_option("--in", *in, "pair JSONL file(s)")->required();
    c->add_option("--out", *out, "also write the grid to this file");
    c->callback([=, &action] {
      action = [=] {
        opts->resolve();
        const std::string grid = format_stats(corpus_stats(load_pairs(*in)));
        std::cout << grid;
        if (!out->empty()) write_text(*out, grid);
      };
    });
  }
  {
    auto* c = data->add_subcommand("split", "deterministic train/dev split");
    auto opts = std::make_shared<ConfigOptions>();
    auto in = std::make_shared<std::string>();
    auto train_out = std::make_shared<std::string>();
    auto dev_out = std::make_shared<std::string>();
    add_common(c, *opts);
    add_key_flag(c, *opts, "--frac", "dev_fraction", "share moved to dev");
    c->add_option("--in", *in, "pair JSONL")->required();
    c->add_option("--train-out", *train_out, "train JSONL output")->required();
    c->add_option("--dev-out", *dev_out, "dev JSONL output")->required();
    c->callback([=, &action] {
      action = [=] {
        const RunConfig cfg = opts->resolve();
        const auto split = split_train_dev(read_jsonl(*in), cfg.get_double("dev_fraction"),
                                           derive_seed(static_cast<std::uint64_t>(cfg.get_long("seed")), "split"));
        write_jsonl(*train_out, split.train);
        write_jsonl(*dev_out, split.dev);
      };
    });
  }
  {
    auto* c = data->add_subcommand("synth", "write the cue-word synthetic corpus");
    auto opts = std::make_shared<ConfigOptions>();
    auto out = std::make_shared<std::string>();
    auto sizes = std::make_shared<std::array<std::size_t, 3>>(std::array<std::size_t, 3>{2000, 400, 400});
    add_common(c, *opts);
    c->add_option("--out-dir", *out, "output directory")->required();
    c->add_option("--train", (*sizes)[0], "train sentences")->capture_default_str();
    c->add_option("--dev", (*sizes)[1], "dev sentences")->capture_default_str();
    c->add_option("--test", (*sizes)[2], "test sentences")->capture_default_str();
    c->callback([=, &action] {
      action = [=] {
        const RunConfig cfg = opts->resolve();
        SyntheticCorpusConfig sc;
        sc.train = (*sizes)[0];
        sc.dev = (*sizes)[1];
        sc.test = (*sizes)[2];
        sc.seed = derive_seed(static_cast<std::uint64_t>(cfg.get_long("seed")), "synthetic");
        const auto corpus = make_synthetic_corpus(sc);
        const fs::path dir = *out;
        fs::create_directories(dir);
        const std::pair<const char*, const std::vector<SentenceRecord>*> parts[] = {
            {"train", &corpus.train}, {"dev", &corpus.dev}, {"test", &corpus.test}};
        for (const auto& [name, records] : parts) {
          write_sentences_jsonl(dir / (std::string("sentences_") + name + ".jsonl"), *records);
          write_jsonl(dir / (std::string(name) + ".jsonl"), instances_of(*records, parse_partition(name)));
        }
      };
    });
  }
}

// ---- train --------------------------------------------------------------------------

void add_classifier_flags(CLI::App* c, ConfigOptions& opts) {
  add_key_flag(c, opts, "--learning-rate", "learning_rate", "peak learning rate");
  add_key_flag(c, opts, "--batch-size", "batch_size", "batch size");
  add_key_flag(c, opts, "--max-epochs", "max_epochs", "epochs");
  add_key_flag(c, opts, "--warmup-steps", "warmup_steps", "warm-up steps");
  add_key_flag(c, opts, "--heads", "head_heads", "attention heads in the fusion head");
  add_key_flag(c, opts, "--dropout-gru", "dropout_gru", "BiGRU dropout");
  add_key_flag(c, opts, "--dropout-fc", "dropout_fc", "FC dropout");
  add_key_flag(c, opts, "--ablation", "ablation", "head variant");
}

void register_train(CLI::App& root, std::function<void()>& action) {
  auto* train = root.add_subcommand("train", "model training")->require_subcommand(1);

  {
    auto* c = train->add_subcommand("classifier", "train the relation classifier");
    auto opts = std::make_shared<ConfigOptions>();
    auto f = std::make_shared<std::map<std::string, std::string>>();
    add_common(c, *opts);
    add_classifier_flags(c, *opts);
    c->add_option("--train", (*f)["train"], "train pair JSONL")->required();
    c->add_option("--dev", (*f)["dev"], "dev pair JSONL")->required();
    c->add_option("--out", (*f)["out"], "checkpoint directory")->required();
    c->add_option("--vocab", (*f)["vocab"], "existing vocabulary (default: built from --train)");
    c->add_option("--augment", (*f)["augment"], "filtered candidates JSONL mixed in per augmentation_ratio");
    c->callback([=, &action] {
      action = [=] {
        const RunConfig cfg = opts->resolve();
        const TrainConfig tc = cfg.classifier_train();
        auto train_pairs = read_jsonl(f->at("train"));
        const Vocab vocab = pipeline_vocab(cfg, f->at("vocab"), train_pairs);
        const auto extra = augmentation(f->at("augment"), cfg.get_double("augmentation_ratio"), train_pairs.size());
        train_pairs.insert(train_pairs.end(), extra.begin(), extra.end());
        const auto tr = examples(train_pairs, vocab, cfg);
        const auto dv = examples(read_jsonl(f->at("dev")), vocab, cfg);
        const fs::path out = f->at("out");
        fs::create_directories(out);
        std::ostringstream log;
        const auto result = train_classifier(tr, dv, tc, model_spec(cfg, vocab), vocab, &log);
        save_checkpoint(out, result.best);
        write_text(out / "steps.csv", log.str());
        write_text(out / "run_config.txt", cfg.to_text());
        write_text(out / "metrics.json", evaluate(result.best.model, dv, tc.include_negative_in_micro).to_json());
      };
    });
  }
  {
    auto* c = train->add_subcommand("generator", "train the base language model and one fine-tune per relation");
    auto opts = std::make_shared<ConfigOptions>();
    auto f = std::make_shared<std::map<std::string, std::string>>();
    add_common(c, *opts);
    add_key_flag(c, *opts, "--learning-rate", "gen_learning_rate", "fine-tune peak learning rate");
    add_key_flag(c, *opts, "--warmup-steps", "gen_warmup_steps", "fine-tune warm-up steps");
    add_key_flag(c, *opts, "--batch-size", "gen_batch_size", "fine-tune batch size");
    add_key_flag(c, *opts, "--max-epochs", "gen_max_epochs", "fine-tune epochs");
    c->add_option("--train", (*f)["train"], "train pair JSONL")->required();
    c->add_option("--out", (*f)["out"], "output directory (base/ plus one directory per relation)")->required();
    c->add_option("--vocab", (*f)["vocab"], "existing vocabulary (default: built from --train)");
    c->callback([=, &action] {
      action = [=] {
        const RunConfig cfg = opts->resolve();
        const auto pairs = read_jsonl(f->at("train"));
        const Vocab vocab = pipeline_vocab(cfg, f->at("vocab"), pairs);
        const auto max_len = static_cast<std::size_t>(cfg.get_long("lm_max_len"));
        const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_long("seed"));

        // Base model over every training sentence, one in ten held out.
        std::vector<std::string> texts;
        std::set<std::string> seen;
        for (const auto& p : pairs)
          if (seen.insert(p.sentence_id + "|" + p.e1.id + "|" + p.e2.id).second)
            texts.push_back(mark_entities(p.text, p.e1, p.e2));
        std::vector<std::size_t> order(texts.size());
        std::iota(order.begin(), order.end(), 0);
        stable_shuffle(order, derive_seed(seed, "base-heldout"));
        std::vector<std::vector<int>> base_train, base_held;
        for (std::size_t i = 0; i < order.size(); ++i)
          (i % 10 == 0 ? base_held : base_train).push_back(lm_sequence(texts[order[i]], vocab, max_len));
        if (base_held.empty() || base_train.empty()) throw std::invalid_argument("too few sentences to train on");
        const CausalLM init(cfg.lm(vocab.size()), derive_seed(seed, "lm-init"));
        const auto base = train_lm(init, base_train, base_held, cfg.base_lm_train());

        const fs::path out = f->at("out");
        save_lm(out / "base", base.model, vocab,
                {{"heldout_perplexity_initial", fmt::format("{}", base.initial_perplexity)},
                 {"heldout_perplexity_best", fmt::format("{}", base.best_perplexity)}});
        std::string table = "model\tinitial_perplexity\tbest_perplexity\tbest_epoch\tsteps\n";
        table += fmt::format("base\t{}\t{}\t{}\t{}\n", base.initial_perplexity, base.best_perplexity, base.best_epoch,
                             base.steps);
        for (const auto& m : finetune_per_relation(base.model, pairs, vocab, cfg.generator_train(),
                                                   cfg.get_double("heldout_fraction"), max_len)) {
          const std::string name(to_string(m.relation));
          save_lm(out / name, m.result.model, vocab,
                  {{"relation", name},
                   {"heldout_perplexity_initial", fmt::format("{}", m.result.initial_perplexity)},
                   {"heldout_perplexity_best", fmt::format("{}", m.result.best_perplexity)}});
          table += fmt::format("{}\t{}\t{}\t{}\t{}\n", name, m.result.initial_perplexity, m.result.best_perplexity,
                               m.result.best_epoch, m.result.steps);
        }
        write_text(out / "perplexity.tsv", table);
      };
    });
  }
  {
    auto* c = train->add_subcommand("grid-search", "pick the learning rate by dev micro-F1");
    auto opts = std::make_shared<ConfigOptions>();
    auto f = std::make_shared<std::map<std::string, std::string>>();
    add_common(c, *opts);
    add_classifier_flags(c, *opts);
    add_key_flag(c, *opts, "--grid", "grid", "comma-separated learning rates");
    c->add_option("--train", (*f)["train"], "train pair JSONL")->required();
    c->add_option("--dev", (*f)["dev"], "dev pair JSONL")->required();
    c->add_option("--out", (*f)["out"], "report TSV")->required();
    c->add_option("--vocab", (*f)["vocab"], "existing vocabulary (default: built from --train)");
    c->callback([=, &action] {
      action = [=] {
        const RunConfig cfg = opts->resolve();
        const auto train_pairs = read_jsonl(f->at("train"));
        const Vocab vocab = pipeline_vocab(cfg, f->at("vocab"), train_pairs);
        const auto report = grid_search(examples(train_pairs, vocab, cfg),
                                        examples(read_jsonl(f->at("dev")), vocab, cfg), cfg.classifier_train(),
                                        model_spec(cfg, vocab), vocab);
        write_text(f->at("out"), report.to_text());
      };
    });
  }
  {
    auto* c = train->add_subcommand("ablation", "train and test every head variant");
    auto opts = std::make_shared<ConfigOptions>();
    auto f = std::make_shared<std::map<std::string, std::string>>();
    add_common(c, *opts);
    add_classifier_flags(c, *opts);
    c->add_option("--train", (*f)["train"], "train pair JSONL")->required();
    c->add_option("--dev", (*f)["dev"], "dev pair JSONL")->required();
    c->add_option("--test", (*f)["test"], "test pair JSONL")->required();
    c->add_option("--out", (*f)["out"], "report TSV")->required();
    c->add_option("--vocab", (*f)["vocab"], "existing vocabulary (default: built from --train)");
    c->callback([=, &action] {
      action = [=] {
        const RunConfig cfg = opts->resolve();
        const auto train_pairs = read_jsonl(f->at("train"));
        const Vocab vocab = pipeline_vocab(cfg, f->at("vocab"), train_pairs);
        const auto report = run_ablation(examples(train_pairs, vocab, cfg),
                                         examples(read_jsonl(f->at("dev")), vocab, cfg),
                                         examples(read_jsonl(f->at("test")), vocab, cfg), cfg.classifier_train(),
                                         model_spec(cfg, vocab), vocab);
        write_text(f->at("out"), report.to_text());
      };
    });
  }
}

// ---- mine ---------------------------------------------------------------------------

void register_mine(CLI::App& root, std::function<void()>& action) {
  auto* mine = root.add_subcommand("mine", "candidate generation, filtering, ranking and evaluation")
                   ->require_subcommand(1);

  {
    auto* c = mine->add_subcommand("generate", "sample candidate sentences from each relation model");
    auto opts = std::make_shared<ConfigOptions>();
    auto f = std::make_shared<std::map<std::string, std::string>>();
    add_common(c, *opts);
    add_key_flag(c, *opts, "--n", "samples_per_relation", "candidates per relation");
    add_key_flag(c, *opts, "--temperature", "temperature", "sampling temperature");
    add_key_flag(c, *opts, "--top-k", "top_k", "top-k truncation; 0 disables");
    add_key_flag(c, *opts, "--max-len", "sample_max_len", "maximum generated tokens");
    c->add_option("--models", (*f)["models"], "directory written by 'train generator'")->required();
    c->add_option("--out", (*f)["out"], "candidates JSONL")->required();
    c->callback([=, &action] {
      action = [=] {
        const RunConfig cfg = opts->resolve();
        const auto n = cfg.get_long("samples_per_relation");
        const SampleConfig base = cfg.sampling();
        std::vector<GeneratedCandidate> out;
        for (RelationLabel label : kAllLabels) {
          if (!is_positive(label)) continue;
          const std::string name(to_string(label));
          const auto lm = load_lm(fs::path(f->at("models")) / name);
          for (long i = 0; i < n; ++i) {
            SampleConfig sc = base;
            sc.seed = derive_seed(base.seed, "sample/" + name + "/" + std::to_string(i));
            GeneratedCandidate cand;
            cand.text = sample(lm.model, lm.vocab, sc);
            cand.relation = label;
            cand.vocab_fingerprint = lm.vocab.fingerprint();
            out.push_back(std::move(cand));
          }
        }
        write_candidates(f->at("out"), out);
      };
    });
  }
  {
    auto* c = mine->add_subcommand("filter", "apply the filter rules and the novelty check");
    auto opts = std::make_shared<ConfigOptions>();
    auto f = std::make_shared<std::map<std::string, std::string>>();
    add_common(c, *opts);
    c->add_option("--in", (*f)["in"], "candidates JSONL")->required();
    c->add_option("--lexicon", (*f)["lexicon"], "training pair JSONL (drug types and known pairs)")->required();
    c->add_option("--out", (*f)["out"], "annotated candidates JSONL")->required();
    c->callback([=, &action] {
      action = [=] {
        opts->resolve();
        const auto pairs = read_jsonl(f->at("lexicon"));
        auto candidates = read_candidates(f->at("in"));
        filter_candidates(candidates, DrugLexicon::from_instances(pairs), PairIndex::from_instances(pairs));
        write_candidates(f->at("out"), candidates);
      };
    });
  }
  {
    auto* c = mine->add_subcommand("rank", "score passing candidates and keep the top k per relation");
    auto opts = std::make_shared<ConfigOptions>();
    auto f = std::make_shared<std::map<std::string, std::string>>();
    add_common(c, *opts);
    add_key_flag(c, *opts, "--k", "rank_k", "rows per relation");
    add_key_flag(c, *opts, "--novel-only", "novel_only", "rank only pairs unseen in training");
    c->add_option("--in", (*f)["in"], "filtered candidates JSONL")->required();
    c->add_option("--checkpoint", (*f)["checkpoint"], "classifier checkpoint directory")->required();
    c->add_option("--out", (*f)["out"], "ranked TSV")->required();
    c->add_option("--scored", (*f)["scored"], "also write candidates with scores to this JSONL");
    c->callback([=, &action] {
      action = [=] {
        const RunConfig cfg = opts->resolve();
        const auto ckpt = load_checkpoint(f->at("checkpoint"));
        auto candidates = read_candidates(f->at("in"));
        const auto tables = rank_candidates(candidates, ckpt, static_cast<std::size_t>(cfg.get_long("rank_k")),
                                            cfg.get_bool("novel_only"));
        write_text(f->at("out"), ranked_tsv(tables));
        if (!f->at("scored").empty()) write_candidates(f->at("scored"), candidates);
      };
    });
  }
  {
    auto* c = mine->add_subcommand("evaluate", "metrics report and confusion matrices on a test set");
    auto opts = std::make_shared<ConfigOptions>();
    auto f = std::make_shared<std::map<std::string, std::string>>();
    add_common(c, *opts);
    c->add_option("--checkpoint", (*f)["checkpoint"], "classifier checkpoint directory")->required();
    c->add_option("--test", (*f)["test"], "test pair JSONL")->required();
    c->add_option("--out-dir", (*f)["out"], "directory for metrics.json and confusion CSVs")->required();
    c->callback([=, &action] {
      action = [=] {
        const RunConfig cfg = opts->resolve();
        const auto ckpt = load_checkpoint(f->at("checkpoint"));
        const auto test = prepare_examples(read_jsonl(f->at("test")), ckpt.vocab,
                                           static_cast<std::size_t>(ckpt.model.encoder_config().max_positions));
        const auto report = evaluate(ckpt.model, test, cfg.get_bool("include_negative_in_micro"));
        const fs::path out = f->at("out");
        write_text(out / "metrics.json", report.to_json());
        write_text(out / "confusion.csv", confusion_csv(report.confusion));
        write_text(out / "confusion_normalized.csv", normalized_confusion_csv(report.normalized));
      };
    });
  }
}

std::string command_path(const CLI::App& app) {
  std::string path;
  const CLI::App* cur = &app;
  while (true) {
    auto subs = cur->get_subcommands();
    if (subs.empty()) break;
    cur = subs.front();
    path += (path.empty() ? "" : " ") + cur->get_name();
  }
  return path;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("egfi"));
  if (const char* level = std::getenv("EGFI_LOG"); level != nullptr)
    spdlog::set_level(spdlog::level::from_str(level));

  CLI::App app{"egfi: drug-drug interaction extraction with generated-data mining"};
  app.require_subcommand(1);
  std::function<void()> action;
  register_data(app, action);
  register_train(app, action);
  register_mine(app, action);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    if (action) action();
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "egfi: error: " << command_path(app) << ": " << msg << "\n";
    return 1;
  }
  return 0;
}

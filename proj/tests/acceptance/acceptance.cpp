// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL/SKIPPED line per criterion. Exits nonzero if
// any criterion fails.
#include "../support/oracles.hpp"
#include "egfi/ablation.hpp"
#include "egfi/config.hpp"
#include "egfi/random.hpp"
#include "egfi/synthetic.hpp"

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>

using namespace egfi;
namespace fs = std::filesystem;

namespace {

enum class Status { pass, fail, skipped };

struct Outcome {
  Status status;
  std::string detail;
};

Outcome verdict(bool ok, std::string detail) { return {ok ? Status::pass : Status::fail, std::move(detail)}; }

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::vector<PairInstance> instances(const std::vector<SentenceRecord>& records, Partition p) {
  std::vector<PairInstance> out;
  for (const auto& r : records) {
    auto v = make_pair_instances(r, p);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

// ---- 1: packed BiGRU ---------------------------------------------------------------

Outcome packed_bigru_equivalence() {
  const Stopwatch clock;
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int width = 8 + static_cast<int>(rng() % 57);
    const int hidden = 8 + static_cast<int>(rng() % 57);
    const int batch = 1 + static_cast<int>(rng() % 8);
    ParamStore store;
    const BiGru gru = BiGru::create(store, "gru", width, hidden, rng);
    std::vector<int> lengths;
    std::vector<Matrix> padded;
    for (int b = 0; b < batch; ++b) {
      lengths.push_back(1 + static_cast<int>(rng() % 50));
      padded.push_back(random_normal(50, width, 1.0, rng));
    }
    const auto out = packed_bigru_batch(padded, lengths, gru);
    for (int b = 0; b < batch; ++b) {
      const Matrix expect = oracle::bigru(padded[b], lengths[b], gru);
      worst = std::max(worst, (out[b].topRows(lengths[b]) - expect).cwiseAbs().maxCoeff());
    }
  }
  const double secs = clock.seconds();
  return verdict(worst < 1e-5 && secs < 60,
                 fmt::format("100 batches, max abs diff {:.3e} (< 1e-5), {:.1f} s (< 60 s)", worst, secs));
}

// ---- 2: gradient fidelity ------------------------------------------------------------

Outcome gradient_fidelity() {
  const Stopwatch clock;
  double worst = 0.0;
  std::string worst_name;
  std::size_t tensors = 0;
  for (Ablation ablation : kAllAblations) {
    ParamStore store;
    FusionConfig cfg;
    cfg.heads = 8;
    cfg.gru_hidden = 8;
    cfg.rep_width = 8;
    cfg.ablation = ablation;
    std::mt19937_64 rng(29);
    const FusionHead head = FusionHead::create(store, cfg, 8, rng);
    const Matrix states = random_normal(6, 8, 1.0, rng);
    const RowVector cls = random_normal(1, 8, 1.0, rng);
    const TokenSpan e1{1, 2}, e2{3, 5};
    const int target = 3;
    const double weight = 2.5;
    auto loss = [&] {
      Tape t;
      const auto tr = head.forward(t, t.constant(states), t.constant(cls), 6, e1, e2);
      return weighted_nll(tr.logits, target, weight).scalar();
    };
    store.zero_grad();
    Tape t;
    const auto tr = head.forward(t, t.constant(states), t.constant(cls), 6, e1, e2);
    t.backward(weighted_nll(tr.logits, target, weight));
    for (auto& p : store) {
      const double err = oracle::relative_error(p->grad, oracle::numeric_gradient(*p, loss));
      ++tensors;
      if (err >= worst) {
        worst = err;
        worst_name = std::string(to_string(ablation)) + ":" + p->name;
      }
    }
  }
  return verdict(worst < 1e-4 && clock.seconds() < 60,
                 fmt::format("{} tensors over 5 head variants, worst relative error {:.3e} ({}), {:.1f} s", tensors,
                             worst, worst_name, clock.seconds()));
}

// ---- 3: metrics oracle -----------------------------------------------------------------

Outcome metrics_oracle() {
  std::mt19937_64 rng(7);
  int mismatches = 0;
  double worst_row = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<int> gold, pred;
    const int n = static_cast<int>(rng() % 300);
    for (int i = 0; i < n; ++i) {
      gold.push_back(static_cast<int>(rng() % kNumLabels));
      pred.push_back(rng() % 2 ? gold.back() : static_cast<int>(rng() % kNumLabels));
    }
    const auto cm = ConfusionMatrix::from_predictions(gold, pred);
    const auto counts = oracle::recount(gold, pred, kNumLabels);
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (int c = 0; c < kNumLabels - 1; ++c) {
      tp += counts[c].tp;
      fp += counts[c].fp;
      fn += counts[c].fn;
    }
    const PRF micro = micro_prf(cm);
    const double p = oracle::ratio(tp, tp + fp), r = oracle::ratio(tp, tp + fn);
    if (micro.precision != p || micro.recall != r || micro.f1 != oracle::f1_of(p, r)) ++mismatches;
    const auto per = per_class_prf(cm);
    for (int c = 0; c < kNumLabels; ++c) {
      const double cp = oracle::ratio(counts[c].tp, counts[c].tp + counts[c].fp);
      const double cr = oracle::ratio(counts[c].tp, counts[c].tp + counts[c].fn);
      if (per[c].precision != cp || per[c].recall != cr || per[c].f1 != oracle::f1_of(cp, cr)) ++mismatches;
    }
    const auto norm = normalize_confusion(cm);
    for (int g = 0; g < kNumLabels; ++g) {
      if (norm.zero_row[g]) continue;
      worst_row = std::max(worst_row, std::abs(std::accumulate(norm.rows[g].begin(), norm.rows[g].end(), 0.0) - 1));
    }
  }
  return verdict(mismatches == 0 && worst_row <= 1e-12,
                 fmt::format("1000 matrices, {} mismatches against the recount, worst row-sum error {:.1e}",
                             mismatches, worst_row));
}

// ---- 4 and 8: synthetic experiments -----------------------------------------------------

struct Synthetic {
  std::vector<PairInstance> train_pairs;
  std::vector<Example> train, dev, test;
  Vocab vocab;
  RunConfig cfg;
  std::optional<Checkpoint> weighted;
  double rate = 0.0;  // chosen on dev from the grid
};

Synthetic synthetic_data() {
  Synthetic s;
  SyntheticCorpusConfig sc;  // 2000/400/400, 9:1 negatives
  sc.seed = derive_seed(static_cast<std::uint64_t>(s.cfg.get_long("seed")), "synthetic");
  const auto corpus = make_synthetic_corpus(sc);
  s.train_pairs = instances(corpus.train, Partition::train);
  s.vocab = build_pipeline_vocab(s.train_pairs, static_cast<int>(s.cfg.get_long("vocab_size")));
  const auto max_len = static_cast<std::size_t>(s.cfg.get_long("max_len"));
  s.train = prepare_examples(s.train_pairs, s.vocab, max_len);
  s.dev = prepare_examples(instances(corpus.dev, Partition::dev), s.vocab, max_len);
  s.test = prepare_examples(instances(corpus.test, Partition::test), s.vocab, max_len);
  return s;
}

Outcome synthetic_end_to_end(Synthetic& s) {
  const auto counts = label_counts(s.train);
  int minority = 0;
  for (int c = 1; c < kNumLabels - 1; ++c)
    if (counts[c] < counts[minority]) minority = c;

  const ModelSpec spec{s.cfg.encoder(s.vocab.size()), s.cfg.head(), std::nullopt};
  TrainConfig weighted = s.cfg.classifier_train();

  // Full protocol: pick the rate on dev from the grid, then train at it.
  const Stopwatch clock;
  const GridReport grid = grid_search(s.train, s.dev, weighted, spec, s.vocab);
  weighted.learning_rate = grid.best_rate;
  s.rate = grid.best_rate;
  auto wr = train_classifier(s.train, s.dev, weighted, spec, s.vocab);
  const double secs = clock.seconds();
  TrainConfig plain = weighted;
  plain.class_weighting = false;
  const auto w_report = evaluate(wr.best.model, s.test);
  const auto pr = train_classifier(s.train, s.dev, plain, spec, s.vocab);
  const auto p_report = evaluate(pr.best.model, s.test);

  s.weighted = std::move(wr.best);
  const double w_recall = w_report.per_class[minority].recall;
  const double p_recall = p_report.per_class[minority].recall;
  const bool ok = w_report.micro.f1 >= 0.95 && secs <= 600 && w_recall - p_recall >= 0.05;
  std::string rates;
  for (const auto& r : grid.rows) rates += fmt::format("{}{}:{:.3f}", rates.empty() ? "" : " ", r.learning_rate, r.dev_micro_f1);
  return verdict(ok, fmt::format("grid dev F1 [{}] -> lr {}; test micro-F1 {:.4f} (>= 0.95) in {:.0f} s including the "
                                 "grid (<= 600 s); {} recall weighted {:.3f} vs unweighted {:.3f} (gap >= 0.05); "
                                 "unweighted micro-F1 {:.4f}",
                                 rates, grid.best_rate, w_report.micro.f1, secs, to_string(static_cast<RelationLabel>(minority)), w_recall,
                                 p_recall, p_report.micro.f1));
}

Outcome ablation_direction(const Synthetic& s) {
  const ModelSpec spec{s.cfg.encoder(s.vocab.size()), s.cfg.head(), std::nullopt};
  const Stopwatch clock;
  TrainConfig tc = s.cfg.classifier_train();
  if (s.rate > 0) tc.learning_rate = s.rate;
  const auto report = run_ablation(s.train, s.dev, s.test, tc, spec, s.vocab);
  const double full = report.rows.front().micro.f1;
  bool ok = report.rows.size() == kAllAblations.size();
  std::string detail = fmt::format("full {:.4f}", full);
  for (std::size_t i = 1; i < report.rows.size(); ++i) {
    const auto& r = report.rows[i];
    ok = ok && r.micro.f1 <= full + 0.02;
    detail += fmt::format(", {} {:.4f}", to_string(r.variant), r.micro.f1);
  }
  return verdict(ok, detail + fmt::format(" (each <= full + 0.02) at lr {}, {:.0f} s", tc.learning_rate, clock.seconds()));
}

// ---- 5: corpus reproduction ---------------------------------------------------------------

Outcome corpus_reproduction() {
  const char* root = std::getenv("EGFI_DDI_DIR");
  if (!root || !*root)
    return {Status::skipped, "DDIExtraction 2013 corpus not available; set EGFI_DDI_DIR to a directory with Train/ "
                             "and Test/"};
  const fs::path dir(root);
  const auto train = [&] {
    std::vector<PairInstance> out;
    for (const auto& r : parse_ddi_xml(dir / "Train")) {
      auto v = make_pair_instances(r, Partition::train);
      out.insert(out.end(), v.begin(), v.end());
    }
    return out;
  }();
  std::vector<PairInstance> test;
  for (const auto& r : parse_ddi_xml(dir / "Test")) {
    auto v = make_pair_instances(r, Partition::test);
    test.insert(test.end(), v.begin(), v.end());
  }
  std::vector<PairInstance> all = train;
  all.insert(all.end(), test.begin(), test.end());
  const auto raw = corpus_stats(all);
  // advise, effect, mechanism, int, negative
  const std::array<std::size_t, 5> t1_train = {826, 1687, 1319, 188, 23665}, t1_test = {221, 360, 302, 96, 4712};
  const std::array<std::size_t, 5> t2_train = {814, 1592, 1260, 188, 8987}, t2_test = {221, 357, 301, 92, 2049};
  bool exact = raw.total(Partition::train) == 27685 && raw.total(Partition::test) == 5691;
  for (int l = 0; l < kNumLabels; ++l) {
    exact = exact && raw.count(Partition::train, static_cast<RelationLabel>(l)) == t1_train[l];
    exact = exact && raw.count(Partition::test, static_cast<RelationLabel>(l)) == t1_test[l];
  }
  const auto filtered = corpus_stats(filter_negatives(all).kept);
  bool within = true;
  std::string worst;
  double worst_dev = 0.0;
  for (int l = 0; l < kNumLabels; ++l)
    for (auto [p, target] : {std::pair{Partition::train, t2_train[l]}, std::pair{Partition::test, t2_test[l]}}) {
      const double got = static_cast<double>(filtered.count(p, static_cast<RelationLabel>(l)));
      const double dev = std::abs(got - static_cast<double>(target)) / static_cast<double>(target);
      within = within && dev <= 0.05;
      if (dev > worst_dev) {
        worst_dev = dev;
        worst = fmt::format("{} {} {} vs {}", p == Partition::train ? "train" : "test",
                            to_string(static_cast<RelationLabel>(l)), got, target);
      }
    }
  return verdict(exact && within,
                 fmt::format("raw counts {}; train total {} test total {}; filtered worst deviation {:.1f}% ({})",
                             exact ? "match exactly" : "differ", raw.total(Partition::train),
                             raw.total(Partition::test), 100 * worst_dev, worst.empty() ? "none" : worst));
}

// ---- 6: filter rules ---------------------------------------------------------------------

Outcome filter_rule_suite() {
  const auto lex = oracle::fixture_lexicon();
  const auto& cases = oracle::filter_fixture();
  int errors = 0;
  std::map<std::string, int> per_verdict;
  bool has_example = false;
  for (const auto& c : cases) {
    const std::string got = oracle::verdict_name(filter_generated(c.text, lex));
    if (got != c.expected) ++errors;
    ++per_verdict[c.expected];
    has_example = has_example || c.text.find("may enhance the antidiabetic action") != std::string::npos;
  }
  std::string mix;
  for (const auto& [k, n] : per_verdict) mix += fmt::format("{}{}={}", mix.empty() ? "" : " ", k, n);
  return verdict(errors == 0 && has_example,
                 fmt::format("{} sentences ({}), {} verdict errors", cases.size(), mix, errors));
}

// ---- 7: schedule and early stop ----------------------------------------------------------

Outcome schedule_and_early_stop() {
  const RunConfig cfg;
  bool ok = true;
  std::string detail;
  for (const TrainConfig& tc : {cfg.classifier_train(), cfg.generator_train()}) {
    const long warmup = tc.warmup_steps, total = std::max<long>(1000, 2 * warmup);
    const double peak = tc.learning_rate;
    const bool start = warmup > 0 ? lr_schedule(0, warmup, total, peak) == 0.0 : lr_schedule(0, 0, total, peak) == peak;
    const bool top = std::abs(lr_schedule(warmup, warmup, total, peak) - peak) <= 1e-15;
    const bool end = lr_schedule(total, warmup, total, peak) == 0.0;
    ok = ok && start && top && end;
    detail += fmt::format("warmup {} peak {}: {}; ", warmup, peak, start && top && end ? "ok" : "wrong");
  }
  const std::vector<std::pair<std::vector<double>, bool>> histories = {
      {{1, 2, 3, 4, 5}, false},       {{1, 2, 3, 4, 5, 6}, true},         {{3, 2, 1, 0.5}, false},
      {{1, 2, 3, 2, 3, 4, 5, 6}, false}, {{1, 2, 3, 2, 3, 4, 5, 6, 7}, true}, {{1, 2, 3, 4, 5, 5}, false}};
  int wrong = 0;
  for (const auto& [h, expect] : histories)
    if (early_stop(h, cfg.classifier_train().patience) != expect) ++wrong;
  ok = ok && wrong == 0;
  return verdict(ok, detail + fmt::format("{} early-stop histories, {} wrong", histories.size(), wrong));
}

// ---- 9: generation loop ------------------------------------------------------------------

Outcome generation_loop(const Synthetic& s) {
  if (!s.weighted) return {Status::fail, "no classifier checkpoint from criterion 4"};
  const Stopwatch clock;
  const RunConfig& cfg = s.cfg;
  const auto seed = static_cast<std::uint64_t>(cfg.get_long("seed"));
  const auto max_len = static_cast<std::size_t>(cfg.get_long("lm_max_len"));

  std::vector<std::vector<int>> base_train, base_held;
  std::vector<std::size_t> order(s.train_pairs.size());
  std::iota(order.begin(), order.end(), 0);
  stable_shuffle(order, derive_seed(seed, "base-heldout"));
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& p = s.train_pairs[order[i]];
    (i % 10 == 0 ? base_held : base_train).push_back(lm_sequence(mark_entities(p.text, p.e1, p.e2), s.vocab, max_len));
  }
  const CausalLM init(cfg.lm(s.vocab.size()), derive_seed(seed, "lm-init"));
  const auto base = train_lm(init, base_train, base_held, cfg.base_lm_train());
  const auto models = finetune_per_relation(base.model, s.train_pairs, s.vocab, cfg.generator_train(),
                                            cfg.get_double("heldout_fraction"), max_len);
  bool improved = models.size() == 4;
  std::string ppl;
  for (const auto& m : models) {
    improved = improved && m.result.best_perplexity < m.result.initial_perplexity;
    ppl += fmt::format("{} {:.2f}->{:.2f}, ", to_string(m.relation), m.result.initial_perplexity,
                       m.result.best_perplexity);
  }

  std::vector<GeneratedCandidate> candidates;
  const SampleConfig sampling = cfg.sampling();
  for (const auto& m : models)
    for (int i = 0; i < 50; ++i) {
      SampleConfig sc = sampling;
      sc.seed = derive_seed(sampling.seed, fmt::format("sample/{}/{}", to_string(m.relation), i));
      GeneratedCandidate c;
      c.text = sample(m.result.model, s.vocab, sc);
      c.relation = m.relation;
      c.vocab_fingerprint = s.vocab.fingerprint();
      candidates.push_back(std::move(c));
    }
  filter_candidates(candidates, DrugLexicon::from_instances(s.train_pairs), PairIndex::from_instances(s.train_pairs));
  const auto passing = std::count_if(candidates.begin(), candidates.end(),
                                     [](const GeneratedCandidate& c) { return c.verdict && c.verdict->pass; });
  const auto tables = rank_candidates(candidates, *s.weighted, static_cast<std::size_t>(cfg.get_long("rank_k")));

  bool sorted = true;
  std::size_t rows = 0;
  for (const auto& [label, table] : tables) {
    rows += table.size();
    for (std::size_t i = 1; i < table.size(); ++i) sorted = sorted && table[i - 1].score >= table[i].score;
  }
  const bool no_int = !tables.count(RelationLabel::interaction);
  bool seven = true;
  std::istringstream tsv(ranked_tsv(tables));
  std::size_t lines = 0;
  for (std::string line; std::getline(tsv, line); ++lines)
    seven = seven && std::count(line.begin(), line.end(), '\t') == 6;
  seven = seven && lines == rows + 1;

  const double secs = clock.seconds();
  const bool ok = improved && sorted && no_int && seven && candidates.size() == 200 && secs < 300;
  return verdict(ok, fmt::format("held-out perplexity {}{} candidates, {} pass the filter, {} ranked rows; "
                                 "sorted={} no_int={} seven_columns={}; {:.0f} s (< 300 s)",
                                 ppl, candidates.size(), passing, rows, sorted, no_int, seven, secs));
}

const char* name(Status s) {
  switch (s) {
    case Status::pass: return "PASS";
    case Status::fail: return "FAIL";
    case Status::skipped: return "SKIPPED";
  }
  return "?";
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  bool failed = false;
  auto report = [&](int n, const std::function<Outcome()>& run) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {Status::fail, std::string("exception: ") + e.what()};
    }
    failed = failed || o.status == Status::fail;
    std::cout << "criterion " << n << ": " << name(o.status) << " - " << o.detail << std::endl;
  };

  report(1, packed_bigru_equivalence);
  report(2, gradient_fidelity);
  report(3, metrics_oracle);
  std::optional<Synthetic> synthetic;
  report(4, [&] {
    synthetic = synthetic_data();
    return synthetic_end_to_end(*synthetic);
  });
  report(5, corpus_reproduction);
  report(6, filter_rule_suite);
  report(7, schedule_and_early_stop);
  report(8, [&] { return synthetic ? ablation_direction(*synthetic) : Outcome{Status::fail, "no synthetic corpus"}; });
  report(9, [&] { return synthetic ? generation_loop(*synthetic) : Outcome{Status::fail, "no synthetic corpus"}; });
  return failed ? 1 : 0;
}

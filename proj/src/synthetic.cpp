// SPDX-License-Identifier: Apache-2.0
#include "egfi/synthetic.hpp"

#include "egfi/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>

namespace egfi {

namespace {

const std::vector<std::string> kStems = {"ami",  "beno", "cara", "dexo",  "feno", "glia", "halo",
                                         "iso",  "keto", "lora", "meto",  "nifa", "oxa",  "pra",
                                         "quina", "rifa", "sulfa", "tetra", "vala", "zido"};
const std::vector<std::string> kEndings = {"zepam", "mycin", "pril", "statin", "vir",
                                           "dipine", "olol", "azole", "cillin", "profen"};

const std::vector<std::string> kOpeners = {"",
                                           "In healthy volunteers ,",
                                           "Clinical data suggest that",
                                           "During therapy ,",
                                           "In one study ,",
                                           "Patients noted that"};
const std::vector<std::string> kClosers = {"", "in most patients", "at high doses", "during treatment",
                                           "in vitro"};

// Every phrase of a relation carries that relation's cue word: "should",
// "effect", "plasma", "interacts". Negatives use neutral connectives.
const std::array<std::vector<std::string>, kNumLabels> kCues = {{
    {"should not be combined with", "should be avoided with", "should be used cautiously with"},
    {"potentiates the effect of", "enhances the effect of", "may amplify the effect of"},
    {"increases plasma levels of", "reduces plasma levels of", "raises plasma levels of"},
    {"interacts with", "reportedly interacts with"},
    {"was compared with", "and", "or", "was given before", "was studied alongside", "was tested separately from"},
}};

std::vector<EntityMention> make_lexicon(std::size_t size, SplitMix64& rng) {
  std::vector<std::string> names;
  for (const auto& s : kStems)
    for (const auto& e : kEndings) names.push_back(s + e);
  stable_shuffle(names, rng.next());
  if (size > names.size()) throw std::invalid_argument("synthetic lexicon size exceeds name space");
  std::vector<EntityMention> lex;
  for (std::size_t i = 0; i < size; ++i) {
    EntityMention m;
    const double u = rng.uniform();
    std::string name = names[i];
    if (u < 0.6) {
      m.type = DrugType::drug;
    } else if (u < 0.75) {
      m.type = DrugType::brand;
      name[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(name[0])));
      name += "ex";
    } else if (u < 0.95) {
      m.type = DrugType::group;
      name += "_agents";
    } else {
      m.type = DrugType::drug_n;
      name += "-7";
    }
    m.surface = name;
    lex.push_back(std::move(m));
  }
  return lex;
}

template <typename T>
const T& pick(const std::vector<T>& v, SplitMix64& rng) {
  return v[static_cast<std::size_t>(rng.below(v.size()))];
}

SentenceRecord make_sentence(const std::string& id, RelationLabel label, const std::vector<EntityMention>& lex,
                             SplitMix64& rng) {
  const EntityMention& a = pick(lex, rng);
  const EntityMention* b = &pick(lex, rng);
  while (b->surface == a.surface) b = &pick(lex, rng);

  SentenceRecord rec;
  rec.id = id;
  std::string text;
  auto append = [&](const std::string& piece) {
    if (piece.empty()) return;
    if (!text.empty()) text += ' ';
    text += piece;
  };
  append(pick(kOpeners, rng));
  if (!text.empty()) text += ' ';
  EntityMention m1 = a;
  m1.id = id + ".e0";
  m1.start = text.size();
  text += a.surface;
  m1.end = text.size();
  append(pick(kCues[static_cast<std::size_t>(label)], rng));
  text += ' ';
  EntityMention m2 = *b;
  m2.id = id + ".e1";
  m2.start = text.size();
  text += b->surface;
  m2.end = text.size();
  append(pick(kClosers, rng));
  text += " .";
  rec.text = std::move(text);
  rec.entities = {m1, m2};
  rec.pairs = {{m1.id, m2.id, label}};
  return rec;
}

std::vector<SentenceRecord> make_partition(const std::string& name, std::size_t n, const SyntheticCorpusConfig& cfg,
                                           const std::vector<EntityMention>& lex, SplitMix64& rng) {
  const auto counts = synthetic_label_counts(cfg, n);
  std::vector<RelationLabel> labels;
  for (std::size_t l = 0; l < kNumLabels; ++l) labels.insert(labels.end(), counts[l], kAllLabels[l]);
  stable_shuffle(labels, rng.next());
  std::vector<SentenceRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < labels.size(); ++i)
    out.push_back(make_sentence("syn." + name + ".s" + std::to_string(i), labels[i], lex, rng));
  return out;
}

}  // namespace

std::array<std::size_t, kNumLabels> synthetic_label_counts(const SyntheticCorpusConfig& cfg, std::size_t n) {
  std::array<std::size_t, kNumLabels> counts{};
  const auto neg = static_cast<std::size_t>(std::llround(cfg.negative_fraction * static_cast<double>(n)));
  counts[static_cast<std::size_t>(RelationLabel::negative)] = neg;
  const std::size_t pos = n - neg;
  const double share_sum = std::accumulate(cfg.positive_shares.begin(), cfg.positive_shares.end(), 0.0);
  std::array<double, 4> rem{};
  std::size_t assigned = 0;
  for (std::size_t l = 0; l < 4; ++l) {
    const double exact = static_cast<double>(pos) * cfg.positive_shares[l] / share_sum;
    counts[l] = static_cast<std::size_t>(std::floor(exact));
    rem[l] = exact - std::floor(exact);
    assigned += counts[l];
  }
  // Largest remainder; ties go to the earlier label.
  while (assigned < pos) {
    std::size_t best = 0;
    for (std::size_t l = 1; l < 4; ++l)
      if (rem[l] > rem[best]) best = l;
    ++counts[best];
    rem[best] = -1.0;
    ++assigned;
  }
  return counts;
}

SyntheticCorpus make_synthetic_corpus(const SyntheticCorpusConfig& config) {
  SplitMix64 rng(derive_seed(config.seed, "synthetic-corpus"));
  SyntheticCorpus c;
  c.lexicon = make_lexicon(config.lexicon_size, rng);
  c.train = make_partition("train", config.train, config, c.lexicon, rng);
  c.dev = make_partition("dev", config.dev, config, c.lexicon, rng);
  c.test = make_partition("test", config.test, config, c.lexicon, rng);
  return c;
}

}  // namespace egfi

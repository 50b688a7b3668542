// SPDX-License-Identifier: Apache-2.0
// Small corpora and model shapes that keep unit tests fast.
#pragma once

#include "egfi/config.hpp"
#include "egfi/synthetic.hpp"
#include "egfi/trainer.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace egfi::tiny {

struct Data {
  std::vector<PairInstance> train, dev, test;
  Vocab vocab;
};

inline std::vector<PairInstance> instances(const std::vector<SentenceRecord>& records, Partition p) {
  std::vector<PairInstance> out;
  for (const auto& r : records) {
    auto v = make_pair_instances(r, p);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

inline Data corpus(std::size_t train = 80, std::size_t dev = 20, std::size_t test = 20, std::uint64_t seed = 13) {
  SyntheticCorpusConfig sc;
  sc.train = train;
  sc.dev = dev;
  sc.test = test;
  sc.seed = seed;
  sc.negative_fraction = 0.5;
  const auto c = make_synthetic_corpus(sc);
  Data d{instances(c.train, Partition::train), instances(c.dev, Partition::dev),
         instances(c.test, Partition::test), {}};
  d.vocab = build_pipeline_vocab(d.train, 200);
  return d;
}

inline ModelSpec spec(const Vocab& vocab) {
  ModelSpec s;
  s.encoder.vocab_size = vocab.size();
  s.encoder.max_positions = 64;
  s.encoder.width = 16;
  s.encoder.layers = 1;
  s.encoder.heads = 2;
  s.encoder.ffn = 32;
  s.head.gru_hidden = 8;
  s.head.rep_width = 8;
  return s;
}

inline std::vector<Example> examples(const std::vector<PairInstance>& p, const Vocab& v) {
  return prepare_examples(p, v, 64);
}

/// A fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("egfi_test_" + name + "_" + std::to_string(std::random_device{}()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace egfi::tiny

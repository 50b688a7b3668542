// SPDX-License-Identifier: Apache-2.0
#include "../support/tiny.hpp"
#include "egfi/corpus.hpp"
#include "egfi/encoder.hpp"
#include "egfi/random.hpp"
#include "egfi/tokenizer.hpp"

#include <doctest.h>

#include <fstream>
#include <set>

using namespace egfi;

namespace {

const std::filesystem::path kFixture = std::filesystem::path(EGFI_FIXTURE_DIR) / "ddi_sample.xml";

std::string replace_once(std::string s, const std::string& from, const std::string& to) {
  const auto pos = s.find(from);
  REQUIRE(pos != std::string::npos);
  return s.replace(pos, from.size(), to);
}

std::vector<PairInstance> fixture_pairs() {
  return tiny::instances(parse_ddi_xml(kFixture), Partition::train);
}

}  // namespace

TEST_CASE("XML fixture parses with code-point offsets and inclusive ends converted") {
  const auto records = parse_ddi_xml(kFixture);
  REQUIRE(records.size() == 4);
  const auto& s0 = records[0];
  CHECK(s0.entities[0].surface == "Aspirin");
  CHECK(s0.entities[0].start == 0);
  CHECK(s0.entities[0].end == 7);
  CHECK(s0.pairs[0].label == RelationLabel::effect);
  // discontinuous mention keeps only its first segment
  CHECK(records[3].entities[0].surface == "β");
  CHECK(records[3].entities[1].surface == "alpha blockers");
  CHECK(records[3].entities[1].start == 15);

  const auto stats = corpus_stats(fixture_pairs());
  CHECK(stats.count(Partition::train, RelationLabel::advise) == 3);
  CHECK(stats.count(Partition::train, RelationLabel::effect) == 1);
  CHECK(stats.count(Partition::train, RelationLabel::mechanism) == 1);
  CHECK(stats.count(Partition::train, RelationLabel::interaction) == 1);
  CHECK(stats.count(Partition::train, RelationLabel::negative) == 8);
  CHECK(stats.total(Partition::train) == 14);
  CHECK(stats.positives(Partition::train) == 6);
  CHECK(format_stats(stats).find("14") != std::string::npos);
}

TEST_CASE("schema violations are reported") {
  CHECK_THROWS_AS(parse_ddi_xml("no/such/file.xml"), CorpusError);
  CHECK_THROWS_AS(parse_ddi_xml_string("<document><sentence id='s' text='ab'>", "bad.xml"), CorpusError);
  const std::string outside =
      "<document><sentence id='s' text='ab'><entity id='e' charOffset='0-5' type='drug' text='ab'/></sentence></document>";
  CHECK_THROWS_WITH_AS(parse_ddi_xml_string(outside, "x.xml"), doctest::Contains("outside"), CorpusError);
  const std::string dangling =
      "<document><sentence id='s' text='ab cd'><entity id='e' charOffset='0-1' type='drug' text='ab'/>"
      "<pair id='p' e1='e' e2='zz' ddi='false'/></sentence></document>";
  CHECK_THROWS_AS(parse_ddi_xml_string(dangling, "x.xml"), CorpusError);
  const std::string bad_type =
      "<document><sentence id='s' text='ab cd'><entity id='e' charOffset='0-1' type='pill' text='ab'/></sentence></document>";
  CHECK_THROWS_AS(parse_ddi_xml_string(bad_type, "x.xml"), CorpusError);
}

TEST_CASE("enrichment reconstructs the sentence and uses the 0-indexed type markers") {
  auto check = [](const PairInstance& p) {
    const std::string m1 = marker_open(1, p.e1.type) + " drug1 " + marker_close(1, p.e1.type);
    const std::string m2 = marker_open(2, p.e2.type) + " drug2 " + marker_close(2, p.e2.type);
    CHECK(replace_once(replace_once(p.enriched_text, m1, p.e1.surface), m2, p.e2.surface) == p.text);
    std::size_t markers = 0;
    for (const auto& m : all_marker_tokens())
      for (auto pos = p.enriched_text.find(m); pos != std::string::npos; pos = p.enriched_text.find(m, pos + 1))
        ++markers;
    CHECK(markers == 4);
  };
  for (const auto& p : fixture_pairs()) check(p);
  for (std::uint64_t seed : {1, 2, 3}) {
    for (const auto& p : tiny::corpus(60, 10, 10, seed).train) check(p);
  }

  CHECK(marker_open(1, DrugType::drug) == "<e10>");
  CHECK(marker_open(2, DrugType::group) == "<e22>");
  CHECK(marker_close(2, DrugType::drug_n) == "</e23>");
  CHECK(all_marker_tokens().size() == 16);
  CHECK(drug_type_from_marker_index(1) == DrugType::brand);
  CHECK_FALSE(drug_type_from_marker_index(4).has_value());
}

TEST_CASE("the generated-sentence shape maps aspirin to suffix 0 and a group to suffix 2") {
  const std::string text = "Aspirin and insulin may enhance the antidiabetic action of antidiabetic_drugs.";
  const EntityMention a{"a", "Aspirin", DrugType::drug, 0, 7};
  const EntityMention g{"g", "antidiabetic_drugs", DrugType::group, 59, 77};
  CHECK(mark_entities(text, a, g) ==
        "<e10> Aspirin </e10> and insulin may enhance the antidiabetic action of <e22> antidiabetic_drugs </e22>.");
  CHECK(enrich(text, a, g) ==
        "<e10> drug1 </e10> and insulin may enhance the antidiabetic action of <e22> drug2 </e22>.");
}

TEST_CASE("negative filtering rules") {
  const auto result = filter_negatives(fixture_pairs());
  std::map<std::string, std::string> removed;
  for (const auto& r : result.removed) removed[r.instance_id] = std::string(to_string(r.rule));
  CHECK(removed.size() == 3);
  CHECK(removed.at("DDI-Fix.d0.s2#DDI-Fix.d0.s2.e0#DDI-Fix.d0.s2.e2") == "a");
  CHECK(removed.at("DDI-Fix.d0.s1#DDI-Fix.d0.s1.e1#DDI-Fix.d0.s1.e2") == "c");

  NegativeFilterConfig off{false, false, false};
  CHECK(filter_negatives(fixture_pairs(), off).removed.empty());

  SUBCASE("only negatives are ever removed") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      auto pairs = tiny::corpus(100, 10, 10, seed).train;
      auto fx = fixture_pairs();
      pairs.insert(pairs.end(), fx.begin(), fx.end());
      std::map<std::string, RelationLabel> label;
      for (const auto& p : pairs) label[p.instance_id] = p.label;
      const auto r = filter_negatives(pairs);
      for (const auto& x : r.removed) CHECK(label.at(x.instance_id) == RelationLabel::negative);
      CHECK(r.kept.size() + r.removed.size() == pairs.size());
    }
  }
}

TEST_CASE("nested surfaces are filtered") {
  PairInstance p;
  p.instance_id = "s#a#b";
  p.sentence_id = "s";
  p.text = "Calcium channel blockers such as calcium were studied.";
  p.e1 = {"a", "Calcium channel blockers", DrugType::group, 0, 24};
  p.e2 = {"b", "calcium", DrugType::drug, 33, 40};
  p.label = RelationLabel::negative;
  const auto r = filter_negatives({p});
  REQUIRE(r.removed.size() == 1);
  CHECK(r.removed[0].rule == NegativeRule::nested_surface);
}

TEST_CASE("stats are permutation invariant and splits partition the input") {
  auto pairs = tiny::corpus(120, 10, 10).train;
  const auto before = corpus_stats(pairs).counts;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    stable_shuffle(pairs, seed);
    CHECK(corpus_stats(pairs).counts == before);
    for (double frac : {0.05, 0.1, 0.5, 0.9}) {
      const auto split = split_train_dev(pairs, frac, seed);
      CHECK(split.train.size() + split.dev.size() == pairs.size());
      std::set<std::string> ids;
      for (const auto& p : split.train) ids.insert(p.instance_id);
      for (const auto& p : split.dev) {
        CHECK(p.partition == Partition::dev);
        CHECK(ids.insert(p.instance_id).second);
      }
      CHECK(ids.size() == pairs.size());
    }
  }
  CHECK_THROWS(split_train_dev(pairs, 0.0, 1));
  CHECK_THROWS(split_train_dev(pairs, 1.0, 1));
}

TEST_CASE("JSONL round trip and line-numbered errors") {
  const auto dir = tiny::scratch("jsonl");
  const auto pairs = fixture_pairs();
  const std::vector<PairInstance> three(pairs.begin(), pairs.begin() + 3);
  write_jsonl(dir / "p.jsonl", three);
  CHECK(read_jsonl(dir / "p.jsonl") == three);
  write_jsonl(dir / "empty.jsonl", {});
  CHECK(std::filesystem::file_size(dir / "empty.jsonl") == 0);
  CHECK(read_jsonl(dir / "empty.jsonl").empty());

  const auto records = parse_ddi_xml(kFixture);
  write_sentences_jsonl(dir / "s.jsonl", records);
  CHECK(read_sentences_jsonl(dir / "s.jsonl") == records);

  {
    std::ofstream bad(dir / "bad.jsonl");
    std::string line = to_json_line(three[0]);
    bad << replace_once(line, "\"label\"", "\"lable\"") << "\n";
  }
  CHECK_THROWS_WITH(read_jsonl(dir / "bad.jsonl"), doctest::Contains("1"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("UTF-8 helpers count code points") {
  CHECK(code_point_length("β-blockers") == 10);
  CHECK(substr_code_points("aβc", 1, 2) == "β");
  CHECK(casefold("NSAIDs") == "nsaids");
}

// ---- tokenizer ----------------------------------------------------------------------

TEST_CASE("pair merging learns the frequent pair first") {
  const Vocab v = build_vocab({"ab ab b"}, 21 + 26 + 1);
  CHECK(v.id("ab") >= 0);
  CHECK(encode_word("ab", v) == std::vector<int>{v.id("ab")});
  CHECK(encode_word("b", v) == std::vector<int>{v.id("b")});
  // "abb" -> ab ##b; "aba" has no "##a" piece and falls back to UNK.
  CHECK(encode_word("abb", v) == std::vector<int>{v.id("ab"), v.id("##b")});
  CHECK(encode_word("aba", v) == std::vector<int>{v.id("ab"), v.unk_id()});
}

TEST_CASE("special tokens occupy fixed ids and are never split") {
  const auto d = tiny::corpus(60, 10, 10);
  const Vocab& v = d.vocab;
  const auto specials = special_tokens();
  for (int i = 0; i < Vocab::kSpecialCount; ++i) CHECK(v.piece(i) == specials[static_cast<std::size_t>(i)]);
  CHECK(v.pad_id() == 0);
  CHECK(v.piece(v.end_id()) == "<endofxt>");
  std::set<std::string> seen(v.pieces().begin(), v.pieces().end());
  CHECK(seen.size() == v.pieces().size());

  for (const auto& p : d.train) {
    const auto in = tokenize(p.enriched_text, v, 64);
    int markers = 0;
    for (int i = 0; i < in.length; ++i) markers += v.is_marker(in.ids[i]);
    CHECK(markers == 4);
    for (std::size_t i = 0; i < in.ids.size(); ++i) CHECK(in.attention_mask[i] == (static_cast<int>(i) < in.length));
    CHECK(in.e1_span.size() > 0);
    CHECK(in.e2_span.size() > 0);
    CHECK((in.e1_span.end <= in.e2_span.begin || in.e2_span.end <= in.e1_span.begin));
    CHECK(in.e2_span.end <= in.length);
    CHECK(detokenize(in.ids, v) == normalize_whitespace(p.enriched_text, v));
  }
  // glued markers are still recognised
  const auto glued = tokenize("<e10>drug1</e10> with <e20> drug2 </e20>.", v, 64);
  CHECK(glued.e1_span.size() == 1);
}

TEST_CASE("vocabulary save and load round trip") {
  const auto d = tiny::corpus(30, 10, 10);
  const auto dir = tiny::scratch("vocab");
  d.vocab.save(dir / "vocab.txt");
  const Vocab back = Vocab::load(dir / "vocab.txt");
  CHECK(back.pieces() == d.vocab.pieces());
  CHECK(back.fingerprint() == d.vocab.fingerprint());
  std::filesystem::remove_all(dir);
}

TEST_CASE("unknown characters fall back to UNK and overflow is an error") {
  const auto d = tiny::corpus(30, 10, 10);
  const auto ids = encode("zzzéé", d.vocab);
  CHECK(std::find(ids.begin(), ids.end(), d.vocab.unk_id()) != ids.end());
  std::string longer = "<e10> drug1 </e10>";
  for (int i = 0; i < 100; ++i) longer += " was";
  longer += " <e20> drug2 </e20>";
  CHECK_THROWS_AS(tokenize(longer, d.vocab, 32), TokenizerError);
}

// ---- encoder --------------------------------------------------------------------------

TEST_CASE("encoder output ignores trailing padding") {
  const auto d = tiny::corpus(30, 10, 10);
  EncoderConfig ec;
  ec.vocab_size = d.vocab.size();
  ec.max_positions = 80;
  ec.width = 16;
  ec.heads = 4;
  ec.ffn = 32;
  const auto params = EncoderParams::initialize(ec, 3);
  const auto shortest = tokenize(d.train[0].enriched_text, d.vocab, 30);
  const auto longest = tokenize(d.train[0].enriched_text, d.vocab, 80);
  const auto a = encoder_forward(shortest, params), b = encoder_forward(longest, params);
  CHECK(a.states.rows() == 30);
  CHECK(b.states.rows() == 80);
  const int n = shortest.length;
  CHECK((a.states.topRows(n) - b.states.topRows(n)).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK((a.cls - b.cls).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(a.states.allFinite());
}

TEST_CASE("encoder checkpoints reload bitwise and a missing one is reported as unavailable") {
  EncoderConfig ec;
  ec.vocab_size = 40;
  ec.max_positions = 16;
  ec.width = 8;
  ec.heads = 2;
  ec.ffn = 16;
  auto params = EncoderParams::initialize(ec, 9);
  round_to_float32(params.store);
  const auto dir = tiny::scratch("encoder");
  save_encoder(dir, params);
  const auto a = load_pretrained_adapter(dir), b = load_pretrained_adapter(dir);
  TokenizedInput in;
  in.ids = {2, 7, 8, 9, 3, 0};
  in.attention_mask = {1, 1, 1, 1, 1, 0};
  in.length = 5;
  CHECK(encoder_forward(in, a).states == encoder_forward(in, b).states);
  CHECK(encoder_forward(in, a).states == encoder_forward(in, params).states);
  CHECK_THROWS_AS(load_pretrained_adapter(dir / "missing"), AdapterUnavailable);
  std::filesystem::remove_all(dir);
}

TEST_CASE("encoder config rejects widths not divisible by heads") {
  EncoderConfig ec;
  ec.vocab_size = 10;
  ec.width = 10;
  ec.heads = 4;
  CHECK_THROWS(ec.validate());
}

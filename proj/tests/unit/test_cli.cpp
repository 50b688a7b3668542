// SPDX-License-Identifier: Apache-2.0
#include "../support/oracles.hpp"
#include "../support/tiny.hpp"
#include "egfi/config.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace egfi;
namespace fs = std::filesystem;

namespace {

struct Run {
  int status;
  std::string output;
};

/// Runs the CLI with stdout and stderr captured together.
Run egfi_cli(const std::string& args, const fs::path& dir) {
  const fs::path out = dir / "cli_output.txt";
  const std::string cmd = std::string(EGFI_BINARY) + " " + args + " > " + out.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  std::ifstream in(out);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config defaults match the documented training settings") {
  const RunConfig cfg;
  CHECK(cfg.get_double("learning_rate") == 3e-5);
  CHECK(cfg.get_long("warmup_steps") == 0);
  CHECK(cfg.get_long("batch_size") == 8);
  CHECK(cfg.get_long("max_epochs") == 7);
  CHECK(cfg.get_long("head_heads") == 8);
  CHECK(cfg.get_double("dropout_gru") == 0.5);
  CHECK(cfg.get_double("dropout_fc") == 0.1);
  CHECK(cfg.get_double("gen_learning_rate") == 3e-5);
  CHECK(cfg.get_long("gen_warmup_steps") == 300);
  CHECK(cfg.get_long("gen_batch_size") == 16);
  CHECK(cfg.get_long("gen_max_epochs") == 5);
  CHECK(cfg.get_long("max_len") == 300);
  CHECK(cfg.get("end_token") == "<endofxt>");
  const auto tc = cfg.classifier_train();
  CHECK(tc.grid == std::vector<double>{1e-5, 2e-5, 3e-5, 4e-5, 5e-5});
  CHECK(tc.patience == 5);
}

TEST_CASE("config merging rejects unknown keys and parses the file grammar") {
  RunConfig cfg;
  CHECK_THROWS_WITH(cfg.merge({{"learning_rate", "1e-5"}, {"learnign_rate", "2"}, {"zzz", "1"}}, "f.conf"),
                    doctest::Contains("learnign_rate, zzz"));
  CHECK(cfg.get_double("learning_rate") == 3e-5);  // nothing applied on error

  const auto dir = tiny::scratch("config");
  {
    std::ofstream f(dir / "run.conf");
    f << "# classifier\n  learning_rate = 2e-5   # comment\n\nbatch_size=4\nbatch_size = 16\n";
  }
  cfg.merge_file(dir / "run.conf");
  CHECK(cfg.get_double("learning_rate") == 2e-5);
  CHECK(cfg.get_long("batch_size") == 16);
  cfg.set("class_weighting", "no");
  CHECK_FALSE(cfg.get_bool("class_weighting"));
  cfg.set("max_epochs", "seven");
  CHECK_THROWS(cfg.get_long("max_epochs"));
  fs::remove_all(dir);
}

TEST_CASE("every subcommand's help lists its flags with defaults") {
  const auto dir = tiny::scratch("help");
  const auto r = egfi_cli("train classifier --help", dir);
  CHECK(r.status == 0);
  CHECK(r.output.find("--learning-rate TEXT [3e-5]") != std::string::npos);
  CHECK(r.output.find("--batch-size TEXT [8]") != std::string::npos);
  CHECK(r.output.find("--max-epochs TEXT [7]") != std::string::npos);
  const auto g = egfi_cli("train generator --help", dir);
  CHECK(g.output.find("[300]") != std::string::npos);
  CHECK(g.output.find("[16]") != std::string::npos);
  for (const char* sub : {"data parse", "data enrich", "data filter-negatives", "data stats", "data split",
                          "data synth", "train grid-search", "train ablation", "mine generate", "mine filter",
                          "mine rank", "mine evaluate"}) {
    CAPTURE(sub);
    const auto h = egfi_cli(std::string(sub) + " --help", dir);
    CHECK(h.status == 0);
    CHECK(h.output.find("--seed TEXT [13]") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("errors exit nonzero with one diagnostic line") {
  const auto dir = tiny::scratch("errors");
  auto r = egfi_cli("mine evaluate --checkpoint " + (dir / "missing").string() + " --test x.jsonl --out-dir " +
                        (dir / "out").string(),
                    dir);
  CHECK(r.status != 0);
  CHECK(r.output.rfind("egfi: error: mine evaluate:", 0) == 0);
  CHECK(std::count(r.output.begin(), r.output.end(), '\n') == 1);
  CHECK_FALSE(fs::exists(dir / "out" / "metrics.json"));

  r = egfi_cli("data synth --out-dir " + (dir / "s").string() + " --set no_such_key=1", dir);
  CHECK(r.status != 0);
  CHECK(r.output.find("no_such_key") != std::string::npos);

  r = egfi_cli("data bogus", dir);
  CHECK(r.status != 0);
  fs::remove_all(dir);
}

TEST_CASE("data commands are idempotent and agree with the library") {
  const auto dir = tiny::scratch("data");
  const std::string xml = (fs::path(EGFI_FIXTURE_DIR) / "ddi_sample.xml").string();
  for (int round = 0; round < 2; ++round) {
    const fs::path out = dir / ("r" + std::to_string(round));
    REQUIRE(egfi_cli("data parse --in " + xml + " --out " + (out / "s.jsonl").string(), dir).status == 0);
    REQUIRE(egfi_cli("data enrich --in " + (out / "s.jsonl").string() + " --out " + (out / "p.jsonl").string(), dir)
                .status == 0);
    REQUIRE(egfi_cli("data filter-negatives --in " + (out / "p.jsonl").string() + " --out " +
                         (out / "k.jsonl").string() + " --removed " + (out / "removed.tsv").string(),
                     dir)
                .status == 0);
    REQUIRE(egfi_cli("data split --in " + (out / "k.jsonl").string() + " --frac 0.3 --train-out " +
                         (out / "tr.jsonl").string() + " --dev-out " + (out / "dv.jsonl").string(),
                     dir)
                .status == 0);
    REQUIRE(egfi_cli("data synth --train 40 --dev 10 --test 10 --out-dir " + (out / "syn").string(), dir).status ==
            0);
  }
  for (const char* f : {"s.jsonl", "p.jsonl", "k.jsonl", "removed.tsv", "tr.jsonl", "dv.jsonl", "syn/train.jsonl",
                        "syn/test.jsonl"}) {
    CAPTURE(f);
    CHECK(slurp(dir / "r0" / f) == slurp(dir / "r1" / f));
    CHECK(!slurp(dir / "r0" / f).empty());
  }
  CHECK(read_jsonl(dir / "r0" / "k.jsonl").size() == 11);
  const auto stats = egfi_cli("data stats --in " + (dir / "r0" / "p.jsonl").string(), dir);
  CHECK(stats.status == 0);
  CHECK(stats.output.find("14") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("mine filter marks a four-word candidate as failing R1") {
  const auto dir = tiny::scratch("mine_filter");
  std::vector<GeneratedCandidate> cands = {{"bad text here now", RelationLabel::advise, {}, false, {}, "x"}};
  write_candidates(dir / "c.jsonl", cands);
  const std::string xml = (fs::path(EGFI_FIXTURE_DIR) / "ddi_sample.xml").string();
  REQUIRE(egfi_cli("data parse --in " + xml + " --out " + (dir / "s.jsonl").string(), dir).status == 0);
  REQUIRE(egfi_cli("data enrich --in " + (dir / "s.jsonl").string() + " --out " + (dir / "p.jsonl").string(), dir)
              .status == 0);
  const auto r = egfi_cli("mine filter --in " + (dir / "c.jsonl").string() + " --lexicon " +
                              (dir / "p.jsonl").string() + " --out " + (dir / "f.jsonl").string(),
                          dir);
  CHECK(r.status == 0);
  const auto back = read_candidates(dir / "f.jsonl");
  REQUIRE(back.size() == 1);
  CHECK(back[0].verdict->rule == "R1");
  CHECK(slurp(dir / "f.jsonl").find("\"R1\"") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("mine evaluate reports micro F1 of 1 on a perfectly predicted set") {
  const auto dir = tiny::scratch("evaluate");
  auto d = tiny::corpus(30, 10, 10);
  Checkpoint ckpt;
  ckpt.model = tiny::spec(d.vocab).build(1);
  ckpt.vocab = d.vocab;
  // Push every prediction to `advise`, then label the test set accordingly.
  ckpt.model.params().get("head.classifier.bias").value(0, 0) = 100.0;
  for (auto& p : d.test) p.label = RelationLabel::advise;
  save_checkpoint(dir / "ckpt", ckpt);
  write_jsonl(dir / "test.jsonl", d.test);
  const auto r = egfi_cli("mine evaluate --checkpoint " + (dir / "ckpt").string() + " --test " +
                              (dir / "test.jsonl").string() + " --out-dir " + (dir / "eval").string(),
                          dir);
  REQUIRE(r.status == 0);
  const auto j = nlohmann::json::parse(slurp(dir / "eval" / "metrics.json"));
  CHECK(j["micro"]["f1"].get<double>() == 1.0);
  CHECK(fs::exists(dir / "eval" / "confusion.csv"));
  CHECK(fs::exists(dir / "eval" / "confusion_normalized.csv"));
  fs::remove_all(dir);
}

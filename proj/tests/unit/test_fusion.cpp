// SPDX-License-Identifier: Apache-2.0
#include "../support/oracles.hpp"
#include "egfi/fusion.hpp"

#include <doctest.h>

using namespace egfi;

namespace {

struct SmallHead {
  ParamStore store;
  FusionHead head;
  Matrix states;
  RowVector cls;
};

SmallHead small_head(Ablation ablation, std::uint64_t seed, int d = 8, int g = 8, int n = 6) {
  SmallHead s;
  FusionConfig cfg;
  cfg.heads = 8;
  cfg.gru_hidden = g;
  cfg.rep_width = 8;
  cfg.ablation = ablation;
  std::mt19937_64 rng(seed);
  s.head = FusionHead::create(s.store, cfg, d, rng);
  s.states = random_normal(n, d, 1.0, rng);
  s.cls = random_normal(1, d, 1.0, rng);
  return s;
}

double head_loss(const SmallHead& s, int length, TokenSpan e1, TokenSpan e2, int target, double weight) {
  Tape t;
  const auto trace =
      s.head.forward(t, t.constant(s.states), t.constant(s.cls), length, e1, e2);
  return weighted_nll(trace.logits, target, weight).scalar();
}

}  // namespace

TEST_CASE("fusion head gradients match central differences for every tensor") {
  for (Ablation ablation : kAllAblations) {
    CAPTURE(to_string(ablation));
    SmallHead s = small_head(ablation, 7);
    const TokenSpan e1{1, 2}, e2{3, 5};
    const int length = 6, target = 2;
    const double weight = 1.7;

    s.store.zero_grad();
    Tape t;
    const auto trace = s.head.forward(t, t.constant(s.states), t.constant(s.cls), length, e1, e2);
    t.backward(weighted_nll(trace.logits, target, weight));

    for (auto& p : s.store) {
      const Matrix numeric =
          oracle::numeric_gradient(*p, [&] { return head_loss(s, length, e1, e2, target, weight); });
      CAPTURE(p->name);
      CHECK(oracle::relative_error(p->grad, numeric) < 1e-4);
    }
  }
}

TEST_CASE("gradients stay correct with padding present") {
  SmallHead s = small_head(Ablation::full, 11);
  const TokenSpan e1{0, 1}, e2{2, 3};
  s.store.zero_grad();
  Tape t;
  const auto trace = s.head.forward(t, t.constant(s.states), t.constant(s.cls), 4, e1, e2);
  t.backward(weighted_nll(trace.logits, 0, 1.0));
  for (auto& p : s.store) {
    const Matrix numeric = oracle::numeric_gradient(*p, [&] { return head_loss(s, 4, e1, e2, 0, 1.0); });
    CAPTURE(p->name);
    CHECK(oracle::relative_error(p->grad, numeric) < 1e-4);
  }
}

TEST_CASE("gradients through encoder and head agree with central differences") {
  EncoderConfig ec;
  ec.vocab_size = 30;
  ec.max_positions = 10;
  ec.width = 8;
  ec.layers = 1;
  ec.heads = 2;
  ec.ffn = 16;
  FusionConfig fc;
  fc.gru_hidden = 4;
  fc.rep_width = 4;
  RelationClassifier model(ec, fc, 5);
  TokenizedInput input;
  input.ids = {2, 9, 5, 11, 12, 6, 17, 3, 0, 0};
  input.attention_mask = {1, 1, 1, 1, 1, 1, 1, 1, 0, 0};
  input.length = 8;
  input.e1_span = {2, 3};
  input.e2_span = {5, 6};

  auto loss = [&] {
    Tape t;
    return weighted_nll(model.forward(t, input).logits, 1, 1.0).scalar();
  };
  model.params().zero_grad();
  {
    Tape t;
    t.backward(weighted_nll(model.forward(t, input).logits, 1, 1.0));
  }
  for (auto& p : model.params()) {
    CAPTURE(p->name);
    CHECK(oracle::relative_error(p->grad, oracle::numeric_gradient(*p, loss)) < 1e-4);
  }
}

TEST_CASE("packed BiGRU equals the per-sequence oracle") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int width = 8 + static_cast<int>(rng() % 57);
    const int hidden = 4 + static_cast<int>(rng() % 13);
    const int batch = 1 + static_cast<int>(rng() % 6);
    ParamStore store;
    const BiGru gru = BiGru::create(store, "gru", width, hidden, rng);
    std::vector<int> lengths;
    std::vector<Matrix> padded;
    for (int b = 0; b < batch; ++b) {
      const int len = 1 + static_cast<int>(rng() % 50);
      lengths.push_back(len);
      padded.push_back(random_normal(50, width, 1.0, rng));
    }
    const auto out = packed_bigru_batch(padded, lengths, gru);
    for (int b = 0; b < batch; ++b) {
      const Matrix expect = oracle::bigru(padded[b], lengths[b], gru);
      CHECK((out[b].topRows(lengths[b]) - expect).cwiseAbs().maxCoeff() < 1e-10);
      if (lengths[b] < out[b].rows()) CHECK(out[b].bottomRows(out[b].rows() - lengths[b]).isZero(0.0));
    }
  }
}

TEST_CASE("pack_padded orders by length and counts active sequences per step") {
  std::vector<Matrix> padded = {Matrix::Constant(4, 1, 1.0), Matrix::Constant(4, 1, 2.0),
                                Matrix::Constant(4, 1, 3.0)};
  const auto packed = pack_padded(padded, {2, 4, 1});
  CHECK(packed.sorted_indices == std::vector<int>{1, 0, 2});
  CHECK(packed.batch_sizes == std::vector<int>{3, 2, 1, 1});
  CHECK(packed.data.rows() == 7);
  CHECK(packed.data(0, 0) == 2.0);
  CHECK(packed.data(1, 0) == 1.0);
  CHECK(packed.data(2, 0) == 3.0);
}

TEST_CASE("packed GRU rejects an empty sequence") {
  std::mt19937_64 rng(1);
  ParamStore store;
  const BiGru gru = BiGru::create(store, "gru", 4, 4, rng);
  CHECK_THROWS(packed_bigru(Matrix::Zero(3, 4), 0, gru));
}

TEST_CASE("single-head attention on a hand case") {
  ParamStore store;
  std::mt19937_64 rng(1);
  auto attn = MultiHeadAttention::create(store, "a", 2, 1, rng, 0.1);
  for (Linear* l : {&attn.query, &attn.key, &attn.value, &attn.output}) {
    l->weight->value = Matrix::Identity(2, 2);
    l->bias->value.setZero();
  }
  Matrix x(2, 2);
  x << 1, 0, 0, 1;
  const Matrix out = multi_head_self_attention(x, {1, 1}, attn);
  // scores = x x^T / sqrt(2); row 0 weights softmax(1/sqrt2, 0)
  const double a = std::exp(1 / std::sqrt(2.0));
  const double w0 = a / (a + 1), w1 = 1 / (a + 1);
  CHECK(out(0, 0) == doctest::Approx(w0).epsilon(1e-12));
  CHECK(out(0, 1) == doctest::Approx(w1).epsilon(1e-12));
  CHECK(out(1, 0) == doctest::Approx(w1).epsilon(1e-12));
  CHECK(out(1, 1) == doctest::Approx(w0).epsilon(1e-12));
}

TEST_CASE("attention rows sum to one and ignore padded keys") {
  ParamStore store;
  std::mt19937_64 rng(9);
  auto attn = MultiHeadAttention::create(store, "a", 16, 8, rng, 0.25);
  Tape t;
  std::vector<Matrix> maps;
  const Matrix bias = padding_bias(7, 4);
  attn(t, t.constant(random_normal(7, 16, 1.0, rng)), &bias, &maps);
  REQUIRE(maps.size() == 8);
  for (const auto& m : maps)
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      CHECK(m.row(r).sum() == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(m.row(r).tail(3).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("perturbing padded states leaves the head output unchanged") {
  SmallHead s = small_head(Ablation::full, 21, 8, 8, 9);
  const TokenSpan e1{0, 2}, e2{3, 4};
  auto run = [&] {
    Tape t;
    return Matrix(s.head.forward(t, t.constant(s.states), t.constant(s.cls), 5, e1, e2).logits.value());
  };
  const Matrix before = run();
  std::mt19937_64 rng(4);
  s.states.bottomRows(4) += random_normal(4, 8, 10.0, rng);
  CHECK((run() - before).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("softmax is shift invariant") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    const RowVector logits = random_normal(1, 5, 3.0, rng);
    const double shift = static_cast<double>(static_cast<int>(rng() % 2001) - 1000);
    const RowVector a = softmax(logits);
    const RowVector b = softmax((logits.array() + shift).matrix());
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-9);
    Eigen::Index ia, ib;
    a.maxCoeff(&ia);
    b.maxCoeff(&ib);
    CHECK(ia == ib);
  }
}

TEST_CASE("ablations change the fused width as documented") {
  FusionConfig cfg;
  const int full = cfg.fused_width();
  CHECK(full == 4 * cfg.rep_width);
  for (Ablation a : kAllAblations) {
    cfg.ablation = a;
    CAPTURE(to_string(a));
    switch (a) {
      case Ablation::full:
      case Ablation::no_attention:
      case Ablation::no_gru:
        CHECK(cfg.fused_width() == full);
        break;
      case Ablation::no_entity:
        CHECK(cfg.fused_width() == full - 2 * cfg.rep_width);
        break;
      case Ablation::no_sentence:
        CHECK(cfg.fused_width() == full - cfg.rep_width);
        break;
    }
  }
}

TEST_CASE("every ablation yields a valid distribution with matching classifier width") {
  for (Ablation a : kAllAblations) {
    SmallHead s = small_head(a, 5);
    CHECK(s.head.classifier().in_features() == s.head.config().fused_width());
    CHECK((s.store.find("head.attention.query.weight") == nullptr) == (a == Ablation::no_attention));
    CHECK((s.store.find("head.gru.forward.w_input") == nullptr) == (a == Ablation::no_gru));
    Tape t;
    const auto trace = s.head.forward(t, t.constant(s.states), t.constant(s.cls), 6, {1, 2}, {3, 4});
    const RowVector p = softmax(trace.logits.value());
    CHECK(p.minCoeff() >= 0.0);
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(trace.fused.cols() == s.head.config().fused_width());
  }
}

TEST_CASE("evaluation forward is deterministic and padding invariant") {
  EncoderConfig ec;
  ec.vocab_size = 40;
  ec.max_positions = 20;
  ec.width = 16;
  ec.heads = 2;
  ec.ffn = 32;
  FusionConfig fc;
  fc.gru_hidden = 8;
  fc.rep_width = 8;
  RelationClassifier model(ec, fc, 3);
  TokenizedInput input;
  input.ids = {2, 5, 30, 6, 22, 23, 9, 31, 10, 3};
  input.length = 10;
  input.attention_mask.assign(10, 1);
  input.e1_span = {2, 3};
  input.e2_span = {7, 8};
  TokenizedInput padded = input;
  padded.ids.resize(20, 0);
  padded.attention_mask.resize(20, 0);

  const auto a = forward_full(input, model);
  const auto b = forward_full(input, model);
  CHECK(a.probs == b.probs);
  const auto c = forward_full(padded, model, true);
  CHECK((a.probs - c.probs).cwiseAbs().maxCoeff() < 1e-5);
  CHECK(a.probs.sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("classify rejects a width mismatch") {
  ParamStore store;
  std::mt19937_64 rng(1);
  const Linear w = Linear::create_uniform(store, "w", 6, 5, rng);
  const RowVector v = RowVector::Ones(2);
  CHECK_THROWS_AS(classify(v, v, v, v, w), std::invalid_argument);
  CHECK_NOTHROW(classify(v, v, v, RowVector(), w));
}

TEST_CASE("ablation names round trip") {
  for (Ablation a : kAllAblations) CHECK(parse_ablation(to_string(a)) == a);
  CHECK_THROWS(parse_ablation("no_everything"));
}

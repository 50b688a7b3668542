// SPDX-License-Identifier: Apache-2.0
#include "egfi/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace egfi {

std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_entity: return "no_entity";
    case Ablation::no_sentence: return "no_sentence";
    case Ablation::no_attention: return "no_attention";
    case Ablation::no_gru: return "no_gru";
  }
  return "?";
}

Ablation parse_ablation(std::string_view s) {
  for (Ablation a : kAllAblations)
    if (to_string(a) == s) return a;
  throw std::invalid_argument("unknown ablation '" + std::string(s) + "'");
}

int FusionConfig::fused_width() const {
  int parts = 1;  // R_cls
  if (use_entities()) parts += 2;
  if (use_sentence()) parts += 1;
  return parts * rep_width;
}

KeyValues FusionConfig::to_key_values() const {
  return {{"head_heads", std::to_string(heads)},
          {"gru_hidden", std::to_string(gru_hidden)},
          {"rep_width", std::to_string(rep_width)},
          {"dropout_gru", std::to_string(gru_dropout)},
          {"dropout_fc", std::to_string(fc_dropout)},
          {"num_labels", std::to_string(num_labels)},
          {"ablation", std::string(to_string(ablation))}};
}

FusionConfig FusionConfig::from_key_values(const KeyValues& kv) {
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw CheckpointError(std::string("head config is missing '") + key + "'");
    return it->second;
  };
  FusionConfig c;
  c.heads = std::stoi(get("head_heads"));
  c.gru_hidden = std::stoi(get("gru_hidden"));
  c.rep_width = std::stoi(get("rep_width"));
  c.gru_dropout = std::stod(get("dropout_gru"));
  c.fc_dropout = std::stod(get("dropout_fc"));
  c.num_labels = std::stoi(get("num_labels"));
  c.ablation = parse_ablation(get("ablation"));
  return c;
}

// ---- GRU ---------------------------------------------------------------------

GruDirection GruDirection::create(ParamStore& store, const std::string& name, int input, int hidden,
                                  std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  GruDirection d;
  d.w_input = &store.add(name + ".w_input", random_uniform(input, 3 * hidden, bound, rng));
  d.b_input = &store.add(name + ".b_input", random_uniform(1, 3 * hidden, bound, rng));
  d.w_hidden = &store.add(name + ".w_hidden", random_uniform(hidden, 3 * hidden, bound, rng));
  d.b_hidden = &store.add(name + ".b_hidden", random_uniform(1, 3 * hidden, bound, rng));
  return d;
}

GruDirection GruDirection::bind(ParamStore& store, const std::string& name) {
  return {&store.get(name + ".w_input"), &store.get(name + ".b_input"), &store.get(name + ".w_hidden"),
          &store.get(name + ".b_hidden")};
}

Var GruDirection::run(Tape& t, Var x, bool reverse) const {
  const int g = hidden();
  const auto n = x.rows();
  Var wi = t.param(*w_input), bi = t.param(*b_input), wh = t.param(*w_hidden), bh = t.param(*b_hidden);
  Var projected = add_row(matmul(x, wi), bi);
  Var h = t.constant(Matrix::Zero(1, g));
  std::vector<Var> out(static_cast<std::size_t>(n));
  for (Eigen::Index step = 0; step < n; ++step) {
    const Eigen::Index pos = reverse ? n - 1 - step : step;
    Var gx = slice_rows(projected, pos, 1);
    Var gh = add_row(matmul(h, wh), bh);
    Var r = sigmoid(add(slice_cols(gx, 0, g), slice_cols(gh, 0, g)));
    Var z = sigmoid(add(slice_cols(gx, g, g), slice_cols(gh, g, g)));
    Var cand = tanh(add(slice_cols(gx, 2 * g, g), mul(r, slice_cols(gh, 2 * g, g))));
    h = add(mul(one_minus(z), cand), mul(z, h));
    out[static_cast<std::size_t>(pos)] = h;
  }
  return concat_rows(out);
}

BiGru BiGru::create(ParamStore& store, const std::string& name, int input, int hidden, std::mt19937_64& rng) {
  return {GruDirection::create(store, name + ".forward", input, hidden, rng),
          GruDirection::create(store, name + ".backward", input, hidden, rng)};
}

BiGru BiGru::bind(ParamStore& store, const std::string& name) {
  return {GruDirection::bind(store, name + ".forward"), GruDirection::bind(store, name + ".backward")};
}

Var BiGru::run(Tape& t, Var x) const {
  return concat_cols({forward_dir.run(t, x, false), backward_dir.run(t, x, true)});
}

// ---- packing -------------------------------------------------------------------

PackedSequence pack_padded(const std::vector<Matrix>& padded, const std::vector<int>& lengths) {
  if (padded.size() != lengths.size()) throw std::invalid_argument("pack_padded: batch/length count mismatch");
  if (padded.empty()) throw std::invalid_argument("pack_padded: empty batch");
  const auto width = padded.front().cols();
  for (std::size_t b = 0; b < padded.size(); ++b) {
    if (lengths[b] < 1) throw std::invalid_argument("pack_padded: sequence " + std::to_string(b) + " has length 0");
    if (lengths[b] > padded[b].rows() || padded[b].cols() != width)
      throw std::invalid_argument("pack_padded: sequence " + std::to_string(b) + " shape mismatch");
  }
  PackedSequence p;
  p.lengths = lengths;
  p.sorted_indices.resize(padded.size());
  std::iota(p.sorted_indices.begin(), p.sorted_indices.end(), 0);
  std::stable_sort(p.sorted_indices.begin(), p.sorted_indices.end(),
                   [&](int a, int b) { return lengths[static_cast<std::size_t>(a)] > lengths[static_cast<std::size_t>(b)]; });
  const int longest = lengths[static_cast<std::size_t>(p.sorted_indices.front())];
  p.batch_sizes.assign(static_cast<std::size_t>(longest), 0);
  for (int len : lengths)
    for (int t = 0; t < len; ++t) ++p.batch_sizes[static_cast<std::size_t>(t)];
  const int total = std::accumulate(lengths.begin(), lengths.end(), 0);
  p.data.resize(total, width);
  Eigen::Index row = 0;
  for (int t = 0; t < longest; ++t)
    for (int slot = 0; slot < p.batch_sizes[static_cast<std::size_t>(t)]; ++slot)
      p.data.row(row++) = padded[static_cast<std::size_t>(p.sorted_indices[static_cast<std::size_t>(slot)])].row(t);
  return p;
}

std::vector<Matrix> unpack_padded(const Matrix& rows, const PackedSequence& layout,
                                  const std::vector<Eigen::Index>& padded_lengths) {
  std::vector<Matrix> out;
  for (std::size_t b = 0; b < layout.lengths.size(); ++b) out.push_back(Matrix::Zero(padded_lengths[b], rows.cols()));
  Eigen::Index row = 0;
  for (std::size_t t = 0; t < layout.batch_sizes.size(); ++t)
    for (int slot = 0; slot < layout.batch_sizes[t]; ++slot)
      out[static_cast<std::size_t>(layout.sorted_indices[static_cast<std::size_t>(slot)])].row(
          static_cast<Eigen::Index>(t)) = rows.row(row++);
  return out;
}

namespace {

Matrix sigmoid_of(const Matrix& m) { return (1.0 / (1.0 + (-m.array()).exp())).matrix(); }

/// One GRU step for the k sequences in `x` (k x d) with previous states `h` (k x g).
Matrix gru_step(const Matrix& x, const Matrix& h, const GruDirection& dir) {
  const Eigen::Index g = dir.hidden();
  Matrix gx = (x * dir.w_input->value).rowwise() + dir.b_input->value.row(0);
  Matrix gh = (h * dir.w_hidden->value).rowwise() + dir.b_hidden->value.row(0);
  Matrix r = sigmoid_of(gx.leftCols(g) + gh.leftCols(g));
  Matrix z = sigmoid_of(gx.middleCols(g, g) + gh.middleCols(g, g));
  Matrix cand = (gx.rightCols(g) + r.cwiseProduct(gh.rightCols(g))).array().tanh().matrix();
  return ((1.0 - z.array()) * cand.array() + z.array() * h.array()).matrix();
}

std::vector<Eigen::Index> offsets_of(const std::vector<int>& batch_sizes) {
  std::vector<Eigen::Index> off(batch_sizes.size() + 1, 0);
  for (std::size_t t = 0; t < batch_sizes.size(); ++t) off[t + 1] = off[t] + batch_sizes[t];
  return off;
}

}  // namespace

Matrix packed_bigru(const PackedSequence& input, const BiGru& gru) {
  const Eigen::Index g = gru.hidden();
  const auto batch = static_cast<Eigen::Index>(input.lengths.size());
  const auto off = offsets_of(input.batch_sizes);
  const auto steps = static_cast<Eigen::Index>(input.batch_sizes.size());
  Matrix out(input.data.rows(), 2 * g);

  Matrix h = Matrix::Zero(batch, g);
  for (Eigen::Index t = 0; t < steps; ++t) {
    const int active = input.batch_sizes[static_cast<std::size_t>(t)];
    Matrix next = gru_step(input.data.middleRows(off[t], active), h.topRows(active), gru.forward_dir);
    h.topRows(active) = next;
    out.block(off[t], 0, active, g) = next;
  }
  // Backward: a sequence joins when t reaches its last real step, from a zero state.
  h.setZero();
  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    const int active = input.batch_sizes[static_cast<std::size_t>(t)];
    Matrix next = gru_step(input.data.middleRows(off[t], active), h.topRows(active), gru.backward_dir);
    h.topRows(active) = next;
    out.block(off[t], g, active, g) = next;
  }
  return out;
}

std::vector<Matrix> packed_bigru_batch(const std::vector<Matrix>& padded, const std::vector<int>& lengths,
                                       const BiGru& gru) {
  const PackedSequence packed = pack_padded(padded, lengths);
  std::vector<Eigen::Index> rows;
  for (const auto& m : padded) rows.push_back(m.rows());
  return unpack_padded(packed_bigru(packed, gru), packed, rows);
}

Matrix packed_bigru(const Matrix& padded, int length, const BiGru& gru) {
  if (length < 1) throw std::invalid_argument("packed_bigru: length must be at least 1");
  return packed_bigru_batch({padded}, {length}, gru).front();
}

// ---- plain stages ----------------------------------------------------------------

RowVector softmax(const RowVector& logits) {
  RowVector p = (logits.array() - logits.maxCoeff()).exp().matrix();
  return p / p.sum();
}

Matrix multi_head_self_attention(const Matrix& states, const std::vector<int>& mask, const MultiHeadAttention& attn) {
  if (static_cast<Eigen::Index>(mask.size()) != states.rows())
    throw std::invalid_argument("multi_head_self_attention: mask length mismatch");
  Matrix bias = Matrix::Zero(states.rows(), states.rows());
  for (Eigen::Index j = 0; j < states.rows(); ++j)
    if (mask[static_cast<std::size_t>(j)] == 0) bias.col(j).setConstant(-std::numeric_limits<double>::infinity());
  Tape t;
  return attn(t, t.constant(states), &bias).value();
}

namespace {

RowVector apply(const Linear& layer, const RowVector& x) {
  if (x.cols() != layer.in_features())
    throw std::invalid_argument("layer expects width " + std::to_string(layer.in_features()) + ", got " +
                                std::to_string(x.cols()));
  return x * layer.weight->value + layer.bias->value.row(0);
}

}  // namespace

RowVector sentence_rep(const Matrix& states, int length, const Linear& layer) {
  if (length < 1 || length > states.rows()) throw std::invalid_argument("sentence_rep: invalid length");
  RowVector joined(2 * states.cols());
  joined << states.row(0), states.row(length - 1);
  return apply(layer, joined.array().tanh().matrix());
}

RowVector entity_rep(const Matrix& states, TokenSpan span, const Linear& layer) {
  if (span.size() <= 0) throw std::invalid_argument("entity_rep: empty span");
  if (span.begin < 0 || span.end > states.rows()) throw std::out_of_range("entity_rep: span outside states");
  RowVector mean = states.middleRows(span.begin, span.size()).colwise().mean();
  return apply(layer, mean.array().tanh().matrix());
}

RowVector cls_rep(const RowVector& cls, const Linear& layer) { return apply(layer, cls.array().tanh().matrix()); }

FusionOutput classify(const RowVector& r_cls, const RowVector& e1, const RowVector& e2, const RowVector& r_s,
                      const Linear& classifier) {
  FusionOutput out{r_cls, e1, e2, r_s, {}, {}, {}};
  out.fused.resize(r_cls.size() + e1.size() + e2.size() + r_s.size());
  Eigen::Index off = 0;
  for (const RowVector* part : {&r_cls, &e1, &e2, &r_s}) {
    out.fused.segment(off, part->size()) = *part;
    off += part->size();
  }
  if (out.fused.cols() != classifier.in_features())
    throw std::invalid_argument("classify: fused width " + std::to_string(out.fused.cols()) +
                                " does not match classifier input " + std::to_string(classifier.in_features()));
  out.logits = apply(classifier, out.fused);
  out.probs = softmax(out.logits);
  return out;
}

// ---- head --------------------------------------------------------------------------

FusionHead FusionHead::create(ParamStore& store, const FusionConfig& config, int encoder_width, std::mt19937_64& rng,
                              const std::string& prefix) {
  if (config.use_attention())
    MultiHeadAttention::create(store, prefix + ".attention", encoder_width, config.heads, rng,
                               1.0 / std::sqrt(static_cast<double>(encoder_width)));
  const int state_width = config.use_gru() ? 2 * config.gru_hidden : encoder_width;
  if (config.use_gru()) BiGru::create(store, prefix + ".gru", encoder_width, config.gru_hidden, rng);
  if (config.use_sentence()) Linear::create_uniform(store, prefix + ".sentence", 2 * state_width, config.rep_width, rng);
  if (config.use_entities()) {
    Linear::create_uniform(store, prefix + ".entity1", state_width, config.rep_width, rng);
    Linear::create_uniform(store, prefix + ".entity2", state_width, config.rep_width, rng);
  }
  Linear::create_uniform(store, prefix + ".cls", encoder_width, config.rep_width, rng);
  Linear::create_uniform(store, prefix + ".classifier", config.fused_width(), config.num_labels, rng);
  return bind(store, config, prefix);
}

FusionHead FusionHead::bind(const ParamStore& cstore, const FusionConfig& config, const std::string& prefix) {
  auto& store = const_cast<ParamStore&>(cstore);
  FusionHead h;
  h.config_ = config;
  if (config.use_attention()) h.attention_ = MultiHeadAttention::bind(store, prefix + ".attention", config.heads);
  if (config.use_gru()) h.gru_ = BiGru::bind(store, prefix + ".gru");
  if (config.use_sentence()) h.sentence_ = Linear::bind(store, prefix + ".sentence");
  if (config.use_entities()) {
    h.entity1_ = Linear::bind(store, prefix + ".entity1");
    h.entity2_ = Linear::bind(store, prefix + ".entity2");
  }
  h.cls_ = Linear::bind(store, prefix + ".cls");
  h.classifier_ = Linear::bind(store, prefix + ".classifier");
  if (h.classifier_.in_features() != config.fused_width())
    throw std::invalid_argument("classifier input width does not match the fused representation");
  return h;
}

FusionHead::Trace FusionHead::forward(Tape& t, Var states, Var cls, int length, TokenSpan e1, TokenSpan e2,
                                      std::mt19937_64* rng) const {
  if (length < 1 || length > states.rows()) throw std::invalid_argument("fusion head: invalid length");
  for (const TokenSpan* s : {&e1, &e2})
    if (s->size() <= 0 || s->begin < 0 || s->end > length)
      throw std::invalid_argument("fusion head: entity span outside the real tokens");

  Trace tr;
  if (config_.use_attention()) {
    const auto n = states.rows();
    const Matrix bias = padding_bias(n, length);
    tr.attended = attention_(t, states, length < n ? &bias : nullptr);
  } else {
    tr.attended = states;
  }
  // Packing: only the real timesteps enter the recurrence.
  Var real = length < tr.attended.rows() ? slice_rows(tr.attended, 0, length) : tr.attended;
  tr.states = config_.use_gru() ? dropout(gru_.run(t, real), config_.gru_dropout, rng) : real;

  const double p = config_.fc_dropout;
  std::vector<Var> parts;
  tr.r_cls = cls_(t, dropout(tanh(cls), p, rng));
  parts.push_back(*tr.r_cls);
  if (config_.use_entities()) {
    tr.e1 = entity1_(t, dropout(tanh(mean_rows(slice_rows(tr.states, e1.begin, e1.size()))), p, rng));
    tr.e2 = entity2_(t, dropout(tanh(mean_rows(slice_rows(tr.states, e2.begin, e2.size()))), p, rng));
    parts.push_back(*tr.e1);
    parts.push_back(*tr.e2);
  }
  if (config_.use_sentence()) {
    Var ends = concat_cols({slice_rows(tr.states, 0, 1), slice_rows(tr.states, length - 1, 1)});
    tr.r_s = sentence_(t, dropout(tanh(ends), p, rng));
    parts.push_back(*tr.r_s);
  }
  tr.fused = concat_cols(parts);
  tr.logits = classifier_(t, tr.fused);
  return tr;
}

// ---- classifier ----------------------------------------------------------------------

RelationClassifier::RelationClassifier(const EncoderConfig& encoder, const FusionConfig& head, std::uint64_t seed)
    : encoder_config_(encoder), head_config_(head) {
  std::mt19937_64 rng(seed);
  Encoder::create(store_, encoder_config_, rng);
  FusionHead::create(store_, head_config_, encoder_config_.width, rng);
  rebind();
}

RelationClassifier::RelationClassifier(const EncoderParams& encoder, const FusionConfig& head, std::uint64_t seed)
    : encoder_config_(encoder.config), head_config_(head), store_(encoder.store) {
  std::mt19937_64 rng(seed);
  FusionHead::create(store_, head_config_, encoder_config_.width, rng);
  rebind();
}

RelationClassifier::RelationClassifier(const RelationClassifier& other)
    : encoder_config_(other.encoder_config_), head_config_(other.head_config_), store_(other.store_) {
  rebind();
}

RelationClassifier& RelationClassifier::operator=(const RelationClassifier& other) {
  if (this == &other) return *this;
  encoder_config_ = other.encoder_config_;
  head_config_ = other.head_config_;
  store_ = other.store_;
  rebind();
  return *this;
}

void RelationClassifier::rebind() {
  encoder_ = Encoder::bind(store_, encoder_config_);
  head_ = FusionHead::bind(store_, head_config_);
}

FusionHead::Trace RelationClassifier::forward(Tape& t, const TokenizedInput& input, std::mt19937_64* rng,
                                              bool full_padding) const {
  const std::vector<int> ids = full_padding ? input.ids : input.real_ids();
  const auto enc = encoder_.forward(t, ids, input.length);
  return head_.forward(t, enc.states, enc.cls, input.length, input.e1_span, input.e2_span, rng);
}

FusionOutput forward_full(const TokenizedInput& input, const RelationClassifier& model, bool full_padding) {
  Tape t;
  const auto tr = model.forward(t, input, nullptr, full_padding);
  FusionOutput out;
  out.r_cls = tr.r_cls->value();
  if (tr.e1) out.e1 = tr.e1->value();
  if (tr.e2) out.e2 = tr.e2->value();
  if (tr.r_s) out.r_s = tr.r_s->value();
  out.fused = tr.fused.value();
  out.logits = tr.logits.value();
  out.probs = softmax(out.logits);
  return out;
}

}  // namespace egfi

// SPDX-License-Identifier: Apache-2.0
#include "egfi/layers.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace egfi {

Matrix random_normal(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Matrix random_uniform(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Linear Linear::create(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out,
                      std::mt19937_64& rng, double stddev) {
  Linear l;
  l.weight = &store.add(name + ".weight", random_normal(in, out, stddev, rng));
  l.bias = &store.add(name + ".bias", Matrix::Zero(1, out));
  return l;
}

Linear Linear::create_uniform(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out,
                              std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = &store.add(name + ".weight", random_uniform(in, out, bound, rng));
  l.bias = &store.add(name + ".bias", random_uniform(1, out, bound, rng));
  return l;
}

Linear Linear::bind(ParamStore& store, const std::string& name) {
  return {&store.get(name + ".weight"), &store.get(name + ".bias")};
}

Var Linear::operator()(Tape& t, Var x) const { return add_row(matmul(x, t.param(*weight)), t.param(*bias)); }

LayerNorm LayerNorm::create(ParamStore& store, const std::string& name, Eigen::Index width) {
  LayerNorm ln;
  ln.gamma = &store.add(name + ".gamma", Matrix::Ones(1, width));
  ln.beta = &store.add(name + ".beta", Matrix::Zero(1, width));
  return ln;
}

LayerNorm LayerNorm::bind(ParamStore& store, const std::string& name) {
  return {&store.get(name + ".gamma"), &store.get(name + ".beta")};
}

Var LayerNorm::operator()(Tape& t, Var x) const { return layer_norm(x, t.param(*gamma), t.param(*beta)); }

MultiHeadAttention MultiHeadAttention::create(ParamStore& store, const std::string& name, Eigen::Index width,
                                              int heads, std::mt19937_64& rng, double stddev) {
  if (heads <= 0 || width % heads != 0)
    throw std::invalid_argument(name + ": width " + std::to_string(width) + " not divisible by " +
                                std::to_string(heads) + " heads");
  MultiHeadAttention a;
  a.query = Linear::create(store, name + ".query", width, width, rng, stddev);
  a.key = Linear::create(store, name + ".key", width, width, rng, stddev);
  a.value = Linear::create(store, name + ".value", width, width, rng, stddev);
  a.output = Linear::create(store, name + ".output", width, width, rng, stddev);
  a.heads = heads;
  return a;
}

MultiHeadAttention MultiHeadAttention::bind(ParamStore& store, const std::string& name, int heads) {
  MultiHeadAttention a;
  a.query = Linear::bind(store, name + ".query");
  a.key = Linear::bind(store, name + ".key");
  a.value = Linear::bind(store, name + ".value");
  a.output = Linear::bind(store, name + ".output");
  a.heads = heads;
  const auto width = a.query.out_features();
  if (heads <= 0 || width % heads != 0)
    throw std::invalid_argument(name + ": width " + std::to_string(width) + " not divisible by " +
                                std::to_string(heads) + " heads");
  return a;
}

Var MultiHeadAttention::operator()(Tape& t, Var x, const Matrix* bias, std::vector<Matrix>* maps) const {
  const Eigen::Index width = query.out_features();
  const Eigen::Index dk = width / heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  Var q = query(t, x);
  Var k = key(t, x);
  Var v = value(t, x);
  std::vector<Var> per_head;
  per_head.reserve(static_cast<std::size_t>(heads));
  if (maps != nullptr) maps->clear();
  for (int h = 0; h < heads; ++h) {
    Var qh = slice_cols(q, h * dk, dk);
    Var kh = slice_cols(k, h * dk, dk);
    Var vh = slice_cols(v, h * dk, dk);
    Var weights = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt_dk), bias);
    if (maps != nullptr) maps->push_back(weights.value());
    per_head.push_back(matmul(weights, vh));
  }
  Var joined = heads == 1 ? per_head.front() : concat_cols(per_head);
  return output(t, joined);
}

Matrix padding_bias(Eigen::Index n, Eigen::Index length) {
  Matrix b = Matrix::Zero(n, n);
  if (length < n) b.rightCols(n - length).setConstant(-std::numeric_limits<double>::infinity());
  return b;
}

Matrix causal_bias(Eigen::Index n) {
  Matrix b = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) b(i, j) = -std::numeric_limits<double>::infinity();
  return b;
}

}  // namespace egfi

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "egfi/tape.hpp"

#include <random>
#include <string>
#include <vector>

namespace egfi {

Matrix random_normal(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng);
Matrix random_uniform(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng);

/// Affine map y = x W + b, W stored in x out.
struct Linear {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  static Linear create(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out,
                       std::mt19937_64& rng, double stddev);
  /// Weight and bias drawn from U(-1/sqrt(in), 1/sqrt(in)).
  static Linear create_uniform(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out,
                               std::mt19937_64& rng);
  static Linear bind(ParamStore& store, const std::string& name);

  Var operator()(Tape& t, Var x) const;
  Eigen::Index in_features() const { return weight->value.rows(); }
  Eigen::Index out_features() const { return weight->value.cols(); }
};

struct LayerNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;

  static LayerNorm create(ParamStore& store, const std::string& name, Eigen::Index width);
  static LayerNorm bind(ParamStore& store, const std::string& name);

  Var operator()(Tape& t, Var x) const;
};

/// Q/K/V projections, per-head scaled dot-product attention, head concat and
/// output mixing.
struct MultiHeadAttention {
  Linear query, key, value, output;
  int heads = 1;

  static MultiHeadAttention create(ParamStore& store, const std::string& name, Eigen::Index width, int heads,
                                   std::mt19937_64& rng, double stddev);
  static MultiHeadAttention bind(ParamStore& store, const std::string& name, int heads);

  /// `bias` is an n x n additive mask (0 or -inf); null attends everywhere.
  /// When `maps` is non-null it receives one n x n attention matrix per head.
  Var operator()(Tape& t, Var x, const Matrix* bias, std::vector<Matrix>* maps = nullptr) const;
};

/// Column mask for a padded sequence: every query may attend to keys
/// [0, length) only.
Matrix padding_bias(Eigen::Index n, Eigen::Index length);
/// Strictly causal mask: query i attends to keys j <= i.
Matrix causal_bias(Eigen::Index n);

}  // namespace egfi

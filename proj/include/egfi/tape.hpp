// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace egfi {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// A named trainable tensor. `grad` accumulates across backward passes until
/// the optimizer (or the caller) zeroes it.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}
};

/// Ordered registry of parameters. Registration order is the serialization
/// order, so two stores built by the same code line up tensor-for-tensor.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore& other);
  ParamStore& operator=(const ParamStore& other);
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Parameter& add(const std::string& name, Matrix value);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();
  std::size_t scalar_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.cbegin(); }
  auto end() const { return params_.cend(); }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives and
/// has not been cleared.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

/// Eager reverse-mode differentiation over dense matrices. Every op computes
/// its value immediately and records a backward closure; `backward` sweeps
/// the closures in reverse and deposits leaf gradients into Parameter::grad.
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Binds a parameter as a leaf. Binding the same parameter twice on one
  /// tape returns the same node.
  Var param(Parameter& p);

  Var record(Matrix value, std::vector<int> inputs, Backward back);

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  Matrix& grad(int id);
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  /// Seeds d(out)/d(out) = 1 for a 1x1 output (or ones for larger outputs,
  /// i.e. differentiates the sum of entries) and accumulates parameter
  /// gradients scaled by `scale`.
  void backward(Var out, double scale = 1.0);

  void clear() {
    nodes_.clear();
    bound_.clear();
  }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    bool needs_grad = false;
    Parameter* param = nullptr;
    Backward back;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> bound_;
};

// ---- ops -----------------------------------------------------------------

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// Adds a 1 x k row to every row of `a`.
Var add_row(Var a, Var row);
Var scale(Var a, double s);
Var one_minus(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var gelu(Var a);

/// Row-wise softmax of `a + bias`, where bias entries are 0 or -inf. A row
/// whose entries are all -inf is rejected with std::invalid_argument.
Var softmax_rows(Var a, const Matrix* bias = nullptr);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-12);

Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var mean_rows(Var a);
Var sum_all(Var a);
Var gather_rows(Var table, const std::vector<int>& ids);

/// Inverted dropout. Identity when `rate` is 0 or `rng` is null.
Var dropout(Var a, double rate, std::mt19937_64* rng);

/// -weight * log(max(softmax(logits)[target], floor)) for a 1 x C logits row.
/// `clamped` (if given) is incremented when the floor is active.
Var weighted_nll(Var logits, int target, double weight, double floor = 1e-12,
                 std::uint64_t* clamped = nullptr);

/// Mean over rows of -log softmax(logits_row)[target_row]; rows whose target
/// is negative are skipped.
Var sequence_nll(Var logits, const std::vector<int>& targets);

}  // namespace egfi

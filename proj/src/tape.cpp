// SPDX-License-Identifier: Apache-2.0
#include "egfi/tape.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace egfi {

ParamStore::ParamStore(const ParamStore& other) {
  for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
}

ParamStore& ParamStore::operator=(const ParamStore& other) {
  if (this == &other) return *this;
  params_.clear();
  for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
  return *this;
}

Parameter& ParamStore::add(const std::string& name, Matrix value) {
  if (find(name) != nullptr) throw std::invalid_argument("duplicate parameter name: " + name);
  params_.push_back(std::make_unique<Parameter>(name, std::move(value)));
  return *params_.back();
}

Parameter* ParamStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

const Parameter* ParamStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

Parameter& ParamStore::get(const std::string& name) {
  if (auto* p = find(name)) return *p;
  throw std::out_of_range("unknown parameter: " + name);
}

const Parameter& ParamStore::get(const std::string& name) const {
  if (const auto* p = find(name)) return *p;
  throw std::out_of_range("unknown parameter: " + name);
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->grad.setZero();
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

const Matrix& Var::value() const { return tape->value(id); }

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return {this, it->second};
  Node n;
  n.value = p.value;
  n.needs_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  bound_.emplace(&p, id);
  return {this, id};
}

Var Tape::record(Matrix value, std::vector<int> inputs, Backward back) {
  Node n;
  n.value = std::move(value);
  for (int i : inputs) n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(i)].needs_grad;
  if (n.needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Matrix& Tape::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var out, double scale) {
  grad(out.id).setConstant(scale);
  for (int i = out.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.has_grad || !n.needs_grad) continue;
    if (n.back) n.back(*this, i);
    Node& m = nodes_[static_cast<std::size_t>(i)];
    if (m.param != nullptr) m.param->grad += m.grad;
  }
}

// ---- ops -----------------------------------------------------------------

namespace {

void check_same(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Tape& t = *a.tape;
  const int ia = a.id, ib = b.id;
  return t.record(a.value() * b.value(), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia).noalias() += g * t.value(ib).transpose();
    if (t.needs_grad(ib)) t.grad(ib).noalias() += t.value(ia).transpose() * g;
  });
}

Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  Tape& t = *a.tape;
  const int ia = a.id, ib = b.id;
  return t.record(a.value() * b.value().transpose(), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia).noalias() += g * t.value(ib);
    if (t.needs_grad(ib)) t.grad(ib).noalias() += g.transpose() * t.value(ia);
  });
}

Var add(Var a, Var b) {
  check_same(a, b, "add");
  const int ia = a.id, ib = b.id;
  return a.tape->record(a.value() + b.value(), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia) += g;
    if (t.needs_grad(ib)) t.grad(ib) += g;
  });
}

Var sub(Var a, Var b) {
  check_same(a, b, "sub");
  const int ia = a.id, ib = b.id;
  return a.tape->record(a.value() - b.value(), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia) += g;
    if (t.needs_grad(ib)) t.grad(ib) -= g;
  });
}

Var mul(Var a, Var b) {
  check_same(a, b, "mul");
  const int ia = a.id, ib = b.id;
  Matrix v = a.value().cwiseProduct(b.value());
  return a.tape->record(std::move(v), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia) += g.cwiseProduct(t.value(ib));
    if (t.needs_grad(ib)) t.grad(ib) += g.cwiseProduct(t.value(ia));
  });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: shape mismatch");
  const int ia = a.id, ir = row.id;
  Matrix v = a.value().rowwise() + row.value().row(0);
  return a.tape->record(std::move(v), {ia, ir}, [ia, ir](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia) += g;
    if (t.needs_grad(ir)) t.grad(ir) += g.colwise().sum();
  });
}

Var scale(Var a, double s) {
  const int ia = a.id;
  return a.tape->record(a.value() * s, {ia}, [ia, s](Tape& t, int self) { t.grad(ia) += t.grad(self) * s; });
}

Var one_minus(Var a) {
  const int ia = a.id;
  Matrix v = (1.0 - a.value().array()).matrix();
  return a.tape->record(std::move(v), {ia}, [ia](Tape& t, int self) { t.grad(ia) -= t.grad(self); });
}

Var tanh(Var a) {
  const int ia = a.id;
  Matrix v = a.value().array().tanh().matrix();
  return a.tape->record(std::move(v), {ia}, [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.grad(ia).array() += t.grad(self).array() * (1.0 - y.array().square());
  });
}

Var sigmoid(Var a) {
  const int ia = a.id;
  Matrix v = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return a.tape->record(std::move(v), {ia}, [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.grad(ia).array() += t.grad(self).array() * y.array() * (1.0 - y.array());
  });
}

Var gelu(Var a) {
  const int ia = a.id;
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  Matrix v = a.value().unaryExpr([inv_sqrt2](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  return a.tape->record(std::move(v), {ia}, [ia, inv_sqrt2](Tape& t, int self) {
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Matrix d = t.value(ia).unaryExpr([&](double x) {
      return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
    });
    t.grad(ia) += t.grad(self).cwiseProduct(d);
  });
}

Var softmax_rows(Var a, const Matrix* bias) {
  const Matrix& x = a.value();
  if (bias != nullptr && (bias->rows() != x.rows() || bias->cols() != x.cols()))
    throw std::invalid_argument("softmax_rows: bias shape mismatch");
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double v = bias != nullptr ? x(r, c) + (*bias)(r, c) : x(r, c);
      y(r, c) = v;
      mx = std::max(mx, v);
    }
    if (!std::isfinite(mx)) throw std::invalid_argument("softmax_rows: fully masked row " + std::to_string(r));
    double s = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      y(r, c) = std::exp(y(r, c) - mx);
      s += y(r, c);
    }
    y.row(r) /= s;
  }
  const int ia = a.id;
  return a.tape->record(std::move(y), {ia}, [ia](Tape& t, int self) {
    const Matrix& yv = t.value(self);
    const Matrix& g = t.grad(self);
    Eigen::VectorXd dots = g.cwiseProduct(yv).rowwise().sum();
    Matrix d = yv.cwiseProduct(g.colwise() - dots);
    t.grad(ia) += d;
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.rows(), d = xv.cols();
  if (gamma.cols() != d || beta.cols() != d) throw std::invalid_argument("layer_norm: width mismatch");
  Matrix xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Matrix y = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  const int ix = x.id, ig = gamma.id, ib = beta.id;
  return x.tape->record(std::move(y), {ix, ig, ib},
                        [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std), d](Tape& t, int self) {
                          const Matrix& g = t.grad(self);
                          if (t.needs_grad(ig)) t.grad(ig) += g.cwiseProduct(xhat).colwise().sum();
                          if (t.needs_grad(ib)) t.grad(ib) += g.colwise().sum();
                          if (t.needs_grad(ix)) {
                            Matrix gx = g.array().rowwise() * t.value(ig).row(0).array();
                            Matrix& out = t.grad(ix);
                            for (Eigen::Index r = 0; r < gx.rows(); ++r) {
                              const double m1 = gx.row(r).mean();
                              const double m2 = gx.row(r).cwiseProduct(xhat.row(r)).mean();
                              out.row(r).array() +=
                                  inv_std(r) * (gx.row(r).array() - m1 - xhat.row(r).array() * m2);
                            }
                          }
                          (void)d;
                        });
}

Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) throw std::out_of_range("slice_rows: out of range");
  const int ia = a.id;
  return a.tape->record(a.value().middleRows(begin, count), {ia}, [ia, begin, count](Tape& t, int self) {
    t.grad(ia).middleRows(begin, count) += t.grad(self);
  });
}

Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) throw std::out_of_range("slice_cols: out of range");
  const int ia = a.id;
  return a.tape->record(a.value().middleCols(begin, count), {ia}, [ia, begin, count](Tape& t, int self) {
    t.grad(ia).middleCols(begin, count) += t.grad(self);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  std::vector<int> ids;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
    ids.push_back(p.id);
  }
  Matrix v(rows, cols);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return parts.front().tape->record(std::move(v), ids, [ids](Tape& t, int self) {
    Eigen::Index o = 0;
    for (int i : ids) {
      const Eigen::Index c = t.value(i).cols();
      if (t.needs_grad(i)) t.grad(i) += t.grad(self).middleCols(o, c);
      o += c;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  std::vector<int> ids;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
    ids.push_back(p.id);
  }
  Matrix v(rows, cols);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  return parts.front().tape->record(std::move(v), ids, [ids](Tape& t, int self) {
    Eigen::Index o = 0;
    for (int i : ids) {
      const Eigen::Index r = t.value(i).rows();
      if (t.needs_grad(i)) t.grad(i) += t.grad(self).middleRows(o, r);
      o += r;
    }
  });
}

Var mean_rows(Var a) {
  if (a.rows() == 0) throw std::invalid_argument("mean_rows: empty input");
  const int ia = a.id;
  const double inv = 1.0 / static_cast<double>(a.rows());
  return a.tape->record(a.value().colwise().mean(), {ia}, [ia, inv](Tape& t, int self) {
    t.grad(ia).rowwise() += t.grad(self).row(0) * inv;
  });
}

Var sum_all(Var a) {
  const int ia = a.id;
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return a.tape->record(std::move(v), {ia}, [ia](Tape& t, int self) { t.grad(ia).array() += t.grad(self)(0, 0); });
}

Var gather_rows(Var table, const std::vector<int>& ids) {
  const Matrix& tv = table.value();
  Matrix v(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) throw std::out_of_range("gather_rows: id " + std::to_string(ids[i]));
    v.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  const int it = table.id;
  return table.tape->record(std::move(v), {it}, [it, ids](Tape& t, int self) {
    Matrix& g = t.grad(it);
    const Matrix& go = t.grad(self);
    for (std::size_t i = 0; i < ids.size(); ++i) g.row(ids[i]) += go.row(static_cast<Eigen::Index>(i));
  });
}

Var dropout(Var a, double rate, std::mt19937_64* rng) {
  if (rate <= 0.0 || rng == nullptr) return a;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  Matrix mask(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*rng) ? s : 0.0;
  const int ia = a.id;
  Matrix v = a.value().cwiseProduct(mask);
  return a.tape->record(std::move(v), {ia}, [ia, mask = std::move(mask)](Tape& t, int self) {
    t.grad(ia) += t.grad(self).cwiseProduct(mask);
  });
}

Var weighted_nll(Var logits, int target, double weight, double floor, std::uint64_t* clamped) {
  const Matrix& z = logits.value();
  if (z.rows() != 1) throw std::invalid_argument("weighted_nll: expects a single row");
  if (target < 0 || target >= z.cols()) throw std::out_of_range("weighted_nll: target out of range");
  const double mx = z.maxCoeff();
  RowVector p = (z.row(0).array() - mx).exp().matrix();
  p /= p.sum();
  const bool is_clamped = p(target) < floor;
  if (is_clamped && clamped != nullptr) ++*clamped;
  Matrix v(1, 1);
  v(0, 0) = -weight * std::log(std::max(p(target), floor));
  const int il = logits.id;
  return logits.tape->record(std::move(v), {il}, [il, p, target, weight, is_clamped](Tape& t, int self) {
    if (is_clamped) return;  // the floor is constant in the logits
    RowVector d = p;
    d(target) -= 1.0;
    t.grad(il).row(0) += t.grad(self)(0, 0) * weight * d;
  });
}

Var sequence_nll(Var logits, const std::vector<int>& targets) {
  const Matrix& z = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != z.rows())
    throw std::invalid_argument("sequence_nll: target count mismatch");
  Matrix probs(z.rows(), z.cols());
  double total = 0.0;
  int counted = 0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double mx = z.row(r).maxCoeff();
    probs.row(r) = (z.row(r).array() - mx).exp().matrix();
    const double s = probs.row(r).sum();
    probs.row(r) /= s;
    const int tgt = targets[static_cast<std::size_t>(r)];
    if (tgt < 0) continue;
    total += -(z(r, tgt) - mx - std::log(s));
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("sequence_nll: no scored positions");
  Matrix v(1, 1);
  v(0, 0) = total / counted;
  const int il = logits.id;
  return logits.tape->record(std::move(v), {il}, [il, probs = std::move(probs), targets, counted](Tape& t, int self) {
    const double g = t.grad(self)(0, 0) / counted;
    Matrix& out = t.grad(il);
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      const int tgt = targets[static_cast<std::size_t>(r)];
      if (tgt < 0) continue;
      out.row(r) += g * probs.row(r);
      out(r, tgt) -= g;
    }
  });
}

}  // namespace egfi

#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every forward op together with a closure that propagates
// gradients to its inputs. Parameters live in a ParamStore; Tape::param
// links a leaf node to a stored DenseArray so that backward() accumulates
// into DenseArray::grad. A tape built with recording disabled evaluates the
// same ops without keeping any backward state.

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "hitmac/env.hpp"

namespace hitmac {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DenseArray {
  Matrix data;
  Matrix grad;

  DenseArray() = default;
  DenseArray(Eigen::Index rows, Eigen::Index cols)
      : data(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

  Eigen::Index rows() const { return data.rows(); }
  Eigen::Index cols() const { return data.cols(); }
  void zero_grad() { grad.setZero(data.rows(), data.cols()); }
};

// Named parameters in insertion order. Indices returned by add() stay valid
// across copies, so a copied store is a full parameter snapshot.
class ParamStore {
 public:
  std::size_t add(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  // Uniform in +-1/sqrt(fan_in).
  std::size_t add_uniform(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                          Eigen::Index fan_in, Rng& rng);

  DenseArray& operator[](std::size_t idx) { return entries_.at(idx).array; }
  const DenseArray& operator[](std::size_t idx) const { return entries_.at(idx).array; }
  DenseArray& at(const std::string& name);
  const DenseArray& at(const std::string& name) const;
  const std::string& name(std::size_t idx) const { return entries_.at(idx).name; }
  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;

  void zero_grad();
  double grad_norm() const;
  // Copies values (not gradients) from a store with identical layout.
  void copy_values_from(const ParamStore& other);
  // Adds other's gradients into this store's gradients.
  void accumulate_grads_from(const ParamStore& other);
  bool same_layout(const ParamStore& other) const;

  // Every entry is prefixed with `prefix` (e.g. "coordinator.").
  void to_json(nlohmann::ordered_json& out, const std::string& prefix) const;
  // Reads every entry named prefix + name; shapes must match.
  void from_json(const nlohmann::ordered_json& in, const std::string& prefix);

 private:
  struct Entry {
    std::string name;
    DenseArray array;
  };
  std::vector<Entry> entries_;
};

// Plain gradient descent with global-norm clipping. Returns the pre-clip norm.
double sgd_step(ParamStore& params, double lr, double clip_norm);

struct Var {
  int id = -1;
};

class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  Var constant(Matrix value);
  Var scalar(double v);
  Var param(DenseArray& p);

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  double item(Var v) const;
  // Gradient accumulated on an intermediate node by the last backward().
  const Matrix& grad(Var v) const { return nodes_.at(v.id).grad; }

  // Seeds d(out)/d(out) = 1 for a 1x1 output and propagates to every
  // linked parameter. Throws std::invalid_argument for a non-scalar output.
  void backward(Var out);

  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var add_row(Var a, Var row);  // broadcast a 1 x c row over a's rows
  Var mul(Var a, Var b);        // elementwise
  Var scale(Var a, double s);
  Var neg(Var a) { return scale(a, -1.0); }
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var log_sigmoid(Var a);
  Var exp(Var a);
  Var square(Var a);
  Var softmax_rows(Var a);
  Var log_softmax_rows(Var a);
  Var sum(Var a);        // 1 x 1
  Var sum_rows(Var a);   // 1 x c, column sums
  Var concat_cols(Var a, Var b);
  Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count);
  Var pick(Var a, Eigen::Index r, Eigen::Index c);  // 1 x 1
  Var stack_rows(const std::vector<Var>& rows);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Tape&, const Node&)> backward;
    DenseArray* param = nullptr;
    bool needs_grad = false;
  };

  Var push(Matrix value, bool needs_grad, std::function<void(Tape&, const Node&)> backward);
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  Matrix& grad_slot(Var v);

  bool recording_;
  std::vector<Node> nodes_;
};

struct Linear {
  std::size_t weight = 0;  // in x out
  std::size_t bias = 0;    // 1 x out

  // Weights uniform in +-weight_scale/sqrt(in), bias uniform in +-1/sqrt(in).
  static Linear create(ParamStore& store, const std::string& name, Eigen::Index in,
                       Eigen::Index out, Rng& rng, double weight_scale = 1.0);
  Var operator()(Tape& tape, ParamStore& store, Var x) const;
};

// Scaled dot-product self-attention with tanh projections:
// H = softmax(Q K^T / sqrt(d_att)) V, Q = tanh(X W_q), K = tanh(X W_k), V = tanh(X W_v).
struct AttentionBlock {
  std::size_t w_q = 0;
  std::size_t w_k = 0;
  std::size_t w_v = 0;
  Eigen::Index d_in = 0;
  Eigen::Index d_att = 0;

  struct Projection {
    Var q, k, v;
  };

  // With focus > 0, W_k starts as a copy of W_q and both are scaled by
  // `focus`, so each row initially attends mostly to itself. The weights
  // remain independent parameters.
  static AttentionBlock create(ParamStore& store, const std::string& name, Eigen::Index d_in,
                               Eigen::Index d_att, Rng& rng, double focus = 0.0);

  Projection project(Tape& tape, ParamStore& store, Var x) const;
  // Attention restricted to the first `count` rows of a projection.
  Var attend(Tape& tape, const Projection& p, Eigen::Index count) const;
  Var operator()(Tape& tape, ParamStore& store, Var x) const;
};

// Columnwise sum of an l x d array.
Var context(Tape& tape, Var h);

// Central finite differences against reverse mode. For every parameter array,
// up to `max_entries` coordinates (evenly strided) are perturbed by +-eps and
// the relative error ||g_ad - g_fd|| / max(1e-8, ||g_ad|| + ||g_fd||) is
// computed; the maximum over arrays is returned. The loss must be 1 x 1.
struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t coordinates_checked = 0;
};

GradCheckReport grad_check(ParamStore& params, const std::function<Var(Tape&)>& loss,
                           double eps, std::size_t max_entries = 48);

void save_params_json(std::ostream& out, const ParamStore& params, const std::string& prefix);

}  // namespace hitmac

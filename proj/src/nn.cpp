#include "hitmac/nn.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace hitmac {

// ---------------------------------------------------------------------------
// ParamStore

std::size_t ParamStore::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  for (const auto& e : entries_) {
    if (e.name == name) throw std::invalid_argument("ParamStore: duplicate name " + name);
  }
  entries_.push_back({name, DenseArray(rows, cols)});
  return entries_.size() - 1;
}

std::size_t ParamStore::add_uniform(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                                    Eigen::Index fan_in, Rng& rng) {
  const std::size_t idx = add(name, rows, cols);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix& w = entries_[idx].array.data;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) w(r, c) = u(rng);
  }
  return idx;
}

DenseArray& ParamStore::at(const std::string& name) {
  for (auto& e : entries_) {
    if (e.name == name) return e.array;
  }
  throw std::out_of_range("ParamStore: no parameter " + name);
}

const DenseArray& ParamStore::at(const std::string& name) const {
  return const_cast<ParamStore*>(this)->at(name);
}

std::size_t ParamStore::parameter_count() const {
  std::size_t c = 0;
  for (const auto& e : entries_) c += static_cast<std::size_t>(e.array.data.size());
  return c;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.array.zero_grad();
}

double ParamStore::grad_norm() const {
  double s = 0.0;
  for (const auto& e : entries_) {
    if (e.array.grad.size() != 0) s += e.array.grad.squaredNorm();
  }
  return std::sqrt(s);
}

bool ParamStore::same_layout(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.array.rows() != b.array.rows() || a.array.cols() != b.array.cols()) {
      return false;
    }
  }
  return true;
}

void ParamStore::copy_values_from(const ParamStore& other) {
  if (!same_layout(other)) throw ShapeError("ParamStore: layout mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i].array.data = other.entries_[i].array.data;
}

void ParamStore::accumulate_grads_from(const ParamStore& other) {
  if (!same_layout(other)) throw ShapeError("ParamStore: layout mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& g = entries_[i].array.grad;
    const auto& og = other.entries_[i].array.grad;
    if (og.size() == 0) continue;
    if (g.size() == 0) {
      g = og;
    } else {
      g += og;
    }
  }
}

void ParamStore::to_json(nlohmann::ordered_json& out, const std::string& prefix) const {
  for (const auto& e : entries_) {
    nlohmann::ordered_json p;
    p["shape"] = {e.array.rows(), e.array.cols()};
    std::vector<double> flat(e.array.data.data(), e.array.data.data() + e.array.data.size());
    p["data"] = flat;
    out[prefix + e.name] = std::move(p);
  }
}

void ParamStore::from_json(const nlohmann::ordered_json& in, const std::string& prefix) {
  for (auto& e : entries_) {
    const std::string key = prefix + e.name;
    if (!in.contains(key)) throw std::invalid_argument("checkpoint is missing parameter " + key);
    const auto& p = in.at(key);
    const auto shape = p.at("shape").get<std::vector<Eigen::Index>>();
    if (shape.size() != 2 || shape[0] != e.array.rows() || shape[1] != e.array.cols()) {
      throw ShapeError("checkpoint shape mismatch for " + key);
    }
    const auto flat = p.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(flat.size()) != e.array.data.size()) {
      throw ShapeError("checkpoint data length mismatch for " + key);
    }
    std::copy(flat.begin(), flat.end(), e.array.data.data());
  }
}

void save_params_json(std::ostream& out, const ParamStore& params, const std::string& prefix) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  params.to_json(j, prefix);
  out << j.dump() << '\n';
}

double sgd_step(ParamStore& params, double lr, double clip_norm) {
  const double norm = params.grad_norm();
  const double scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    DenseArray& p = params[i];
    if (p.grad.size() == 0) continue;
    p.data -= (lr * scale) * p.grad;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::push(Matrix value, bool needs_grad, std::function<void(Tape&, const Node&)> backward) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = recording_ && needs_grad;
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Matrix& Tape::grad_slot(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Var Tape::param(DenseArray& p) {
  Var v = push(p.data, true, nullptr);
  if (recording_) nodes_[v.id].param = &p;
  return v;
}

double Tape::item(Var v) const {
  const Matrix& m = value(v);
  if (m.rows() != 1 || m.cols() != 1) throw ShapeError("item: value is not 1x1");
  return m(0, 0);
}

void Tape::backward(Var out) {
  if (!recording_) throw std::logic_error("backward on a non-recording tape");
  const Matrix& v = value(out);
  if (v.rows() != 1 || v.cols() != 1) {
    throw std::invalid_argument("backward: objective must be a 1x1 scalar");
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad_slot(out)(0, 0) = 1.0;
  for (int id = out.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, n);
    if (n.param != nullptr) {
      if (n.param->grad.size() == 0) n.param->zero_grad();
      n.param->grad += n.grad;
    }
  }
}

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace

Var Tape::matmul(Var a, Var b) {
  require(value(a).cols() == value(b).rows(), "matmul: inner dimensions differ");
  Matrix out = value(a) * value(b);
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Node& self) {
    if (t.needs(a)) t.grad_slot(a).noalias() += self.grad * t.value(b).transpose();
    if (t.needs(b)) t.grad_slot(b).noalias() += t.value(a).transpose() * self.grad;
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  require(value(a).cols() == value(b).cols(), "matmul_nt: column counts differ");
  Matrix out = value(a) * value(b).transpose();
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Node& self) {
    if (t.needs(a)) t.grad_slot(a).noalias() += self.grad * t.value(b);
    if (t.needs(b)) t.grad_slot(b).noalias() += self.grad.transpose() * t.value(a);
  });
}

Var Tape::add(Var a, Var b) {
  require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(),
          "add: shape mismatch");
  Matrix out = value(a) + value(b);
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Node& self) {
    if (t.needs(a)) t.grad_slot(a) += self.grad;
    if (t.needs(b)) t.grad_slot(b) += self.grad;
  });
}

Var Tape::sub(Var a, Var b) {
  require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(),
          "sub: shape mismatch");
  Matrix out = value(a) - value(b);
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Node& self) {
    if (t.needs(a)) t.grad_slot(a) += self.grad;
    if (t.needs(b)) t.grad_slot(b) -= self.grad;
  });
}

Var Tape::add_row(Var a, Var row) {
  require(value(row).rows() == 1 && value(row).cols() == value(a).cols(),
          "add_row: row must be 1 x cols(a)");
  Matrix out = value(a).rowwise() + value(row).row(0);
  return push(std::move(out), needs(a) || needs(row), [a, row](Tape& t, const Node& self) {
    if (t.needs(a)) t.grad_slot(a) += self.grad;
    if (t.needs(row)) t.grad_slot(row) += self.grad.colwise().sum();
  });
}

Var Tape::mul(Var a, Var b) {
  require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(),
          "mul: shape mismatch");
  Matrix out = value(a).cwiseProduct(value(b));
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Node& self) {
    if (t.needs(a)) t.grad_slot(a) += self.grad.cwiseProduct(t.value(b));
    if (t.needs(b)) t.grad_slot(b) += self.grad.cwiseProduct(t.value(a));
  });
}

Var Tape::scale(Var a, double s) {
  Matrix out = value(a) * s;
  return push(std::move(out), needs(a), [a, s](Tape& t, const Node& self) {
    t.grad_slot(a) += s * self.grad;
  });
}

Var Tape::tanh(Var a) {
  Matrix out = value(a).array().tanh().matrix();
  return push(std::move(out), needs(a), [a](Tape& t, const Node& self) {
    t.grad_slot(a).array() += self.grad.array() * (1.0 - self.value.array().square());
  });
}

Var Tape::sigmoid(Var a) {
  Matrix out = value(a).unaryExpr([](double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  return push(std::move(out), needs(a), [a](Tape& t, const Node& self) {
    t.grad_slot(a).array() += self.grad.array() * self.value.array() * (1.0 - self.value.array());
  });
}

Var Tape::log_sigmoid(Var a) {
  Matrix out = value(a).unaryExpr([](double x) {
    return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
  });
  return push(std::move(out), needs(a), [a](Tape& t, const Node& self) {
    // d/dx log sigmoid(x) = sigmoid(-x) = 1 - exp(log sigmoid(x))
    t.grad_slot(a).array() += self.grad.array() * (1.0 - self.value.array().exp());
  });
}

Var Tape::exp(Var a) {
  Matrix out = value(a).array().exp().matrix();
  return push(std::move(out), needs(a), [a](Tape& t, const Node& self) {
    t.grad_slot(a).array() += self.grad.array() * self.value.array();
  });
}

Var Tape::square(Var a) {
  Matrix out = value(a).array().square().matrix();
  return push(std::move(out), needs(a), [a](Tape& t, const Node& self) {
    t.grad_slot(a).array() += 2.0 * self.grad.array() * t.value(a).array();
  });
}

Var Tape::softmax_rows(Var a) {
  const Matrix& x = value(a);
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return push(std::move(out), needs(a), [a](Tape& t, const Node& self) {
    const Matrix& y = self.value;
    const Eigen::VectorXd dot = (self.grad.cwiseProduct(y)).rowwise().sum();
    Matrix& g = t.grad_slot(a);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      g.row(r).array() += y.row(r).array() * (self.grad.row(r).array() - dot(r));
    }
  });
}

Var Tape::log_softmax_rows(Var a) {
  const Matrix& x = value(a);
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    const double lse = mx + std::log((x.row(r).array() - mx).exp().sum());
    out.row(r) = (x.row(r).array() - lse).matrix();
  }
  return push(std::move(out), needs(a), [a](Tape& t, const Node& self) {
    const Eigen::VectorXd gsum = self.grad.rowwise().sum();
    Matrix& g = t.grad_slot(a);
    for (Eigen::Index r = 0; r < self.value.rows(); ++r) {
      g.row(r).array() += self.grad.row(r).array() - self.value.row(r).array().exp() * gsum(r);
    }
  });
}

Var Tape::sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = value(a).sum();
  return push(std::move(out), needs(a), [a](Tape& t, const Node& self) {
    t.grad_slot(a).array() += self.grad(0, 0);
  });
}

Var Tape::sum_rows(Var a) {
  Matrix out = value(a).colwise().sum();
  return push(std::move(out), needs(a), [a](Tape& t, const Node& self) {
    t.grad_slot(a).rowwise() += self.grad.row(0);
  });
}

Var Tape::concat_cols(Var a, Var b) {
  require(value(a).rows() == value(b).rows(), "concat_cols: row counts differ");
  const Eigen::Index ca = value(a).cols();
  Matrix out(value(a).rows(), ca + value(b).cols());
  out << value(a), value(b);
  return push(std::move(out), needs(a) || needs(b), [a, b, ca](Tape& t, const Node& self) {
    if (t.needs(a)) t.grad_slot(a) += self.grad.leftCols(ca);
    if (t.needs(b)) t.grad_slot(b) += self.grad.rightCols(self.grad.cols() - ca);
  });
}

Var Tape::slice_rows(Var a, Eigen::Index begin, Eigen::Index count) {
  require(begin >= 0 && count >= 0 && begin + count <= value(a).rows(), "slice_rows: out of range");
  Matrix out = value(a).middleRows(begin, count);
  return push(std::move(out), needs(a), [a, begin, count](Tape& t, const Node& self) {
    t.grad_slot(a).middleRows(begin, count) += self.grad;
  });
}

Var Tape::pick(Var a, Eigen::Index r, Eigen::Index c) {
  require(r >= 0 && c >= 0 && r < value(a).rows() && c < value(a).cols(), "pick: out of range");
  Matrix out(1, 1);
  out(0, 0) = value(a)(r, c);
  return push(std::move(out), needs(a), [a, r, c](Tape& t, const Node& self) {
    t.grad_slot(a)(r, c) += self.grad(0, 0);
  });
}

Var Tape::stack_rows(const std::vector<Var>& rows) {
  require(!rows.empty(), "stack_rows: no rows");
  const Eigen::Index cols = value(rows[0]).cols();
  Eigen::Index total = 0;
  bool any = false;
  for (Var r : rows) {
    require(value(r).cols() == cols, "stack_rows: column counts differ");
    total += value(r).rows();
    any = any || needs(r);
  }
  Matrix out(total, cols);
  Eigen::Index at = 0;
  for (Var r : rows) {
    out.middleRows(at, value(r).rows()) = value(r);
    at += value(r).rows();
  }
  return push(std::move(out), any, [rows](Tape& t, const Node& self) {
    Eigen::Index at = 0;
    for (Var r : rows) {
      const Eigen::Index h = t.value(r).rows();
      if (t.needs(r)) t.grad_slot(r) += self.grad.middleRows(at, h);
      at += h;
    }
  });
}

// ---------------------------------------------------------------------------
// Layers

Linear Linear::create(ParamStore& store, const std::string& name, Eigen::Index in,
                      Eigen::Index out, Rng& rng, double weight_scale) {
  Linear l;
  l.weight = store.add_uniform(name + ".weight", in, out, in, rng);
  store[l.weight].data *= weight_scale;
  l.bias = store.add_uniform(name + ".bias", 1, out, in, rng);
  return l;
}

Var Linear::operator()(Tape& tape, ParamStore& store, Var x) const {
  return tape.add_row(tape.matmul(x, tape.param(store[weight])), tape.param(store[bias]));
}

AttentionBlock AttentionBlock::create(ParamStore& store, const std::string& name,
                                      Eigen::Index d_in, Eigen::Index d_att, Rng& rng,
                                      double focus) {
  AttentionBlock b;
  b.d_in = d_in;
  b.d_att = d_att;
  b.w_q = store.add_uniform(name + ".w_q", d_in, d_att, d_in, rng);
  b.w_k = store.add_uniform(name + ".w_k", d_in, d_att, d_in, rng);
  b.w_v = store.add_uniform(name + ".w_v", d_in, d_att, d_in, rng);
  if (focus > 0.0) {
    store[b.w_q].data *= focus;
    store[b.w_k].data = store[b.w_q].data;
  }
  return b;
}

AttentionBlock::Projection AttentionBlock::project(Tape& tape, ParamStore& store, Var x) const {
  if (tape.value(x).cols() != d_in) throw ShapeError("attention: input width differs from d_in");
  if (tape.value(x).rows() < 1) throw ShapeError("attention: empty input");
  return {tape.tanh(tape.matmul(x, tape.param(store[w_q]))),
          tape.tanh(tape.matmul(x, tape.param(store[w_k]))),
          tape.tanh(tape.matmul(x, tape.param(store[w_v])))};
}

Var AttentionBlock::attend(Tape& tape, const Projection& p, Eigen::Index count) const {
  Var q = p.q;
  Var k = p.k;
  Var v = p.v;
  if (count != tape.value(p.q).rows()) {
    q = tape.slice_rows(p.q, 0, count);
    k = tape.slice_rows(p.k, 0, count);
    v = tape.slice_rows(p.v, 0, count);
  }
  Var scores = tape.scale(tape.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d_att)));
  return tape.matmul(tape.softmax_rows(scores), v);
}

Var AttentionBlock::operator()(Tape& tape, ParamStore& store, Var x) const {
  const Projection p = project(tape, store, x);
  return attend(tape, p, tape.value(x).rows());
}

Var context(Tape& tape, Var h) { return tape.sum_rows(h); }

// ---------------------------------------------------------------------------
// Gradient check

GradCheckReport grad_check(ParamStore& params, const std::function<Var(Tape&)>& loss,
                           double eps, std::size_t max_entries) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw std::invalid_argument("grad_check: eps must be in (0, 1e-2]");
  params.zero_grad();
  {
    Tape tape(true);
    Var out = loss(tape);
    tape.backward(out);  // throws on a non-scalar objective
  }
  auto evaluate = [&]() {
    Tape tape(false);
    return tape.item(loss(tape));
  };

  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    DenseArray& arr = params[p];
    const auto total = static_cast<std::size_t>(arr.data.size());
    const std::size_t stride = std::max<std::size_t>(1, total / std::max<std::size_t>(1, max_entries));
    double diff2 = 0.0;
    double ad2 = 0.0;
    double fd2 = 0.0;
    for (std::size_t idx = 0; idx < total; idx += stride) {
      double& w = arr.data.data()[idx];
      const double saved = w;
      w = saved + eps;
      const double up = evaluate();
      w = saved - eps;
      const double down = evaluate();
      w = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double ad = arr.grad.size() == 0 ? 0.0 : arr.grad.data()[idx];
      diff2 += (ad - fd) * (ad - fd);
      ad2 += ad * ad;
      fd2 += fd * fd;
      ++report.coordinates_checked;
    }
    const double rel = std::sqrt(diff2) / std::max(1e-8, std::sqrt(ad2) + std::sqrt(fd2));
    if (report.worst_parameter.empty() || rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_parameter = params.name(p);
    }
  }
  return report;
}

}  // namespace hitmac

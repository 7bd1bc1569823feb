#include "hitmac/policy.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace hitmac {

namespace {

// Policy heads start near uniform.
constexpr double kPolicyHeadScale = 0.01;

// Pair embeddings are nearly identical at initialization; self-focused
// attention keeps the per-pair assignment logits distinguishable.
constexpr double kPairFocus = 16.0;

}  // namespace

Matrix flatten_observation(const Observation& obs) {
  Matrix flat(static_cast<Eigen::Index>(obs.n()) * obs.m(), Observation::kFeatures);
  Eigen::Index r = 0;
  for (const auto& e : obs.entries()) {
    for (int f = 0; f < Observation::kFeatures; ++f) flat(r, f) = e[f];
    ++r;
  }
  return flat;
}

// ---------------------------------------------------------------------------
// Coordinator

CoordinatorNet::CoordinatorNet(Rng& rng, Eigen::Index hidden) : hidden_(hidden) {
  embed1_ = Linear::create(params_, "encoder.fc1", Observation::kFeatures, hidden, rng);
  embed2_ = Linear::create(params_, "encoder.fc2", hidden, hidden, rng);
  encoder_ = AttentionBlock::create(params_, "encoder.attention", hidden, hidden, rng, kPairFocus);
  actor_ = Linear::create(params_, "actor.fc", hidden, 1, rng);
  critic_attention_ = AttentionBlock::create(params_, "critic.attention", hidden, hidden, rng);
  contribution_head_ = Linear::create(params_, "critic.phi", 2 * hidden, 1, rng);
}

Var CoordinatorNet::encode(Tape& tape, const Observation& obs) {
  if (obs.n() < 1 || obs.m() < 1) throw ShapeError("coordinator: empty observation");
  return encode_rows(tape, tape.constant(flatten_observation(obs)));
}

Var CoordinatorNet::encode_rows(Tape& tape, Var flat) {
  Var x = tape.tanh(embed1_(tape, params_, flat));
  x = tape.tanh(embed2_(tape, params_, x));
  return encoder_(tape, params_, x);
}

Var CoordinatorNet::assignment_logits(Tape& tape, Var h) { return actor_(tape, params_, h); }

CoordinatorNet::Amc CoordinatorNet::amc_value(Tape& tape, Var h) {
  const Eigen::Index l = tape.value(h).rows();
  if (l < 1) throw std::invalid_argument("amc_value: empty state representation");
  if (tape.value(h).cols() != hidden_) throw ShapeError("amc_value: width differs from hidden");

  Amc out;
  // Q', K', V' are row-wise maps of H, so projecting once and attending over
  // the first e rows equals Att'(H[1:e]) for every prefix.
  const AttentionBlock::Projection proj = critic_attention_.project(tape, params_, h);
  out.coalition_features.push_back(tape.constant(Matrix::Zero(1, hidden_)));
  for (Eigen::Index e = 1; e < l; ++e) {
    out.coalition_features.push_back(tape.sum_rows(critic_attention_.attend(tape, proj, e)));
  }
  Var eta = tape.stack_rows(out.coalition_features);
  out.contributions = contribution_head_(tape, params_, tape.concat_cols(eta, h));
  out.value = tape.sum(out.contributions);
  return out;
}

GoalSample coordinator_act(const Matrix& probs, int n, int m, Rng& rng, bool greedy) {
  if (probs.rows() != static_cast<Eigen::Index>(n) * m || probs.cols() != 1) {
    throw ShapeError("coordinator_act: probs must be (n*m) x 1");
  }
  GoalSample s;
  s.goals = GoalMap(n, m);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      const double p = probs(static_cast<Eigen::Index>(i) * m + j, 0);
      const bool g = greedy ? p > 0.5 : u(rng) < p;
      s.goals.set(i, j, g);
      s.log_prob += std::log(g ? p : 1.0 - p);
    }
  }
  return s;
}

Var goal_log_prob(Tape& tape, Var logits, const GoalMap& goals) {
  const Eigen::Index l = tape.value(logits).rows();
  if (l != static_cast<Eigen::Index>(goals.n()) * goals.m()) throw ShapeError("goal_log_prob: size mismatch");
  Matrix g(l, 1);
  for (int i = 0; i < goals.n(); ++i) {
    for (int j = 0; j < goals.m(); ++j) g(static_cast<Eigen::Index>(i) * goals.m() + j, 0) = goals(i, j) ? 1.0 : 0.0;
  }
  Matrix not_g = Matrix::Ones(l, 1) - g;
  Var on = tape.mul(tape.constant(std::move(g)), tape.log_sigmoid(logits));
  Var off = tape.mul(tape.constant(std::move(not_g)), tape.log_sigmoid(tape.neg(logits)));
  return tape.sum(tape.add(on, off));
}

Var goal_entropy(Tape& tape, Var logits) {
  Var log_p = tape.log_sigmoid(logits);
  Var log_q = tape.log_sigmoid(tape.neg(logits));
  Var terms = tape.add(tape.mul(tape.exp(log_p), log_p), tape.mul(tape.exp(log_q), log_q));
  return tape.neg(tape.sum(terms));
}

std::vector<Observation::Entry> goal_filter(std::span<const Observation::Entry> rows,
                                            std::span<const std::uint8_t> goal_bits) {
  if (rows.size() != goal_bits.size()) throw ShapeError("goal_filter: observation and goal lengths differ");
  std::vector<Observation::Entry> out;
  for (std::size_t j = 0; j < rows.size(); ++j) {
    if (goal_bits[j] != 0) out.push_back(rows[j]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Executor

ExecutorNet::ExecutorNet(Rng& rng, Eigen::Index hidden) : hidden_(hidden) {
  encoder_ = AttentionBlock::create(params_, "encoder.attention", Observation::kFeatures, hidden, rng);
  actor_ = Linear::create(params_, "actor.fc", hidden, kExecutorActions, rng, kPolicyHeadScale);
  critic_ = Linear::create(params_, "critic.fc", hidden, 1, rng);
}

ExecutorNet::Forward ExecutorNet::forward(Tape& tape, std::span<const Observation::Entry> rows) {
  if (rows.empty()) throw ShapeError("executor: empty input");
  Matrix x(static_cast<Eigen::Index>(rows.size()), Observation::kFeatures);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (int f = 0; f < Observation::kFeatures; ++f) x(static_cast<Eigen::Index>(r), f) = rows[r][f];
  }
  Var h = encoder_(tape, params_, tape.constant(std::move(x)));
  Var c = context(tape, h);
  return {tape.log_softmax_rows(actor_(tape, params_, c)), critic_(tape, params_, c)};
}

ExecutorDecision executor_act(ExecutorNet& net, std::span<const Observation::Entry> rows, Rng& rng,
                              bool greedy) {
  ExecutorDecision d;
  if (rows.empty()) {
    d.empty_goal = true;
    return d;
  }
  Tape tape(false);
  const ExecutorNet::Forward f = net.forward(tape, rows);
  const Matrix& lp = tape.value(f.log_probs);
  for (int a = 0; a < kExecutorActions; ++a) d.probs[a] = std::exp(lp(0, a));
  int idx = 0;
  if (greedy) {
    for (int a = 1; a < kExecutorActions; ++a) {
      if (lp(0, a) > lp(0, idx)) idx = a;
    }
  } else {
    std::discrete_distribution<int> pick(d.probs.begin(), d.probs.end());
    idx = pick(rng);
  }
  d.action = action_from_index(idx);
  d.log_prob = lp(0, idx);
  d.value = tape.item(f.value);
  return d;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::string& path, const ParamStore& params, const std::string& kind,
                     Eigen::Index hidden, const std::string& manifest) {
  nlohmann::ordered_json doc;
  doc["kind"] = kind;
  doc["hidden"] = hidden;
  doc["manifest"] = manifest;
  nlohmann::ordered_json p = nlohmann::ordered_json::object();
  params.to_json(p, kind + ".");
  doc["params"] = std::move(p);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << doc.dump() << '\n';
}

nlohmann::ordered_json read_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path);
  return nlohmann::ordered_json::parse(in);
}

void load_checkpoint(const nlohmann::ordered_json& doc, ParamStore& params, const std::string& kind) {
  if (doc.value("kind", std::string{}) != kind) {
    throw std::invalid_argument("checkpoint kind is not " + kind);
  }
  params.from_json(doc.at("params"), kind + ".");
}

}  // namespace hitmac

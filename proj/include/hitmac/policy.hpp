#pragma once

// The two-level policy. The coordinator maps the joint observation to a
// sensor-target goal map and estimates the team value as a sum of
// approximate marginal contributions; executors track their assigned
// targets with a shared goal-conditioned network.

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hitmac/env.hpp"
#include "hitmac/nn.hpp"

namespace hitmac {

inline constexpr Eigen::Index kHiddenUnits = 128;
inline constexpr int kExecutorActions = 3;

// Flattened (i, j) pair order with j fastest: row i*m + j.
Matrix flatten_observation(const Observation& obs);

class CoordinatorNet {
 public:
  CoordinatorNet(Rng& rng, Eigen::Index hidden = kHiddenUnits);

  Eigen::Index hidden() const { return hidden_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // (n*m) x hidden state representation H.
  Var encode(Tape& tape, const Observation& obs);
  Var encode_rows(Tape& tape, Var flat);
  // (n*m) x 1 assignment logits; sigmoid gives p_ij.
  Var assignment_logits(Tape& tape, Var h);

  struct Amc {
    Var value;          // 1 x 1, v_H
    Var contributions;  // l x 1, phi_e in coalition order
    std::vector<Var> coalition_features;  // eta_1 .. eta_l, each 1 x hidden
  };
  // Team value by approximate marginal contributions over the fixed coalition
  // order 1..l. Throws std::invalid_argument for an empty H.
  Amc amc_value(Tape& tape, Var h);

  const AttentionBlock& critic_attention() const { return critic_attention_; }
  const Linear& contribution_head() const { return contribution_head_; }

 private:
  Eigen::Index hidden_;
  ParamStore params_;
  Linear embed1_;
  Linear embed2_;
  AttentionBlock encoder_;
  Linear actor_;
  AttentionBlock critic_attention_;
  Linear contribution_head_;
};

struct GoalSample {
  GoalMap goals;
  double log_prob = 0.0;
};

// Samples g_ij ~ Bernoulli(p_ij) independently, or thresholds at 0.5 when
// greedy. probs is (n*m) x 1 in flattened pair order.
GoalSample coordinator_act(const Matrix& probs, int n, int m, Rng& rng, bool greedy = false);

// sum_ij [g log p + (1-g) log(1-p)] computed from logits.
Var goal_log_prob(Tape& tape, Var logits, const GoalMap& goals);
// Sum of per-pair Bernoulli entropies.
Var goal_entropy(Tape& tape, Var logits);

// Rows of o_i whose goal bit is set, in original order. Throws ShapeError on
// length mismatch.
std::vector<Observation::Entry> goal_filter(std::span<const Observation::Entry> rows,
                                            std::span<const std::uint8_t> goal_bits);

class ExecutorNet {
 public:
  ExecutorNet(Rng& rng, Eigen::Index hidden = kHiddenUnits);

  Eigen::Index hidden() const { return hidden_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  struct Forward {
    Var log_probs;  // 1 x 3 over actions (-1, 0, +1)
    Var value;      // 1 x 1
  };
  // rows must be non-empty.
  Forward forward(Tape& tape, std::span<const Observation::Entry> rows);

 private:
  Eigen::Index hidden_;
  ParamStore params_;
  AttentionBlock encoder_;
  Linear actor_;
  Linear critic_;
};

inline Action action_from_index(int idx) { return idx - 1; }
inline int index_from_action(Action a) { return a + 1; }

struct ExecutorDecision {
  Action action = 0;
  double log_prob = 0.0;
  double value = 0.0;
  std::array<double, kExecutorActions> probs{0.0, 1.0, 0.0};
  bool empty_goal = false;
};

// Samples from the policy (argmax when greedy). An empty goal row yields
// Stay with log_prob 0 and value 0.
ExecutorDecision executor_act(ExecutorNet& net, std::span<const Observation::Entry> rows, Rng& rng,
                              bool greedy = false);

// Checkpoints: {"kind", "hidden", "manifest", "params": {"<kind>.<name>": {shape, data}}}.
void save_checkpoint(const std::string& path, const ParamStore& params, const std::string& kind,
                     Eigen::Index hidden, const std::string& manifest);
nlohmann::ordered_json read_checkpoint(const std::string& path);
void load_checkpoint(const nlohmann::ordered_json& doc, ParamStore& params, const std::string& kind);

}  // namespace hitmac

#pragma once

// Two-stage advantage actor-critic training. Stage one trains the shared
// executor against distance-generated goals; stage two trains the
// coordinator over macro-steps of k primitive steps with scripted or frozen
// learned executors.

#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "hitmac/env.hpp"
#include "hitmac/nn.hpp"
#include "hitmac/policy.hpp"

namespace hitmac {

enum class Stage { Executor, Coordinator };

struct TrainConfig {
  double gamma = 0.9;
  double entropy_weight = 0.01;
  double lr = 5e-4;
  double clip_norm = 10.0;
  int workers = 6;
  int update_every = 20;  // primitive steps; the coordinator rounds up to whole macro-steps
  int episodes = 50000;
  std::uint64_t seed = 0;
  Stage stage = Stage::Executor;
  std::string executor_policy = "scripted";  // or a checkpoint path
  Eigen::Index hidden = kHiddenUnits;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
Stage parse_stage(const std::string& s);
std::string to_string(Stage s);

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Returns {
  std::vector<double> returns;
  std::vector<double> advantages;
};

// R_t = r_t + gamma R_{t+1} seeded by `bootstrap`; A_t = R_t - v_t.
Returns compute_returns(std::span<const double> rewards, std::span<const double> values,
                        double bootstrap, double gamma);

// Mean of the per-step team rewards inside one macro-step.
double macro_reward(std::span<const double> team_rewards);

struct LossReport {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
  std::vector<double> advantages;  // per policy term, in loss order
};

// One differentiable sample of the actor-critic objective.
struct PolicyTerm {
  Var log_prob;  // 1 x 1
  Var entropy;   // 1 x 1
  Var value;     // 1 x 1
};

// loss = -sum log_prob * A + 1/2 sum (R - v)^2 - entropy_weight * sum entropy
// A enters as a constant. When `advantages` is empty it is R - v evaluated on
// this tape. Returns the total loss; `report` receives the component values.
Var actor_critic_loss(Tape& tape, const std::vector<PolicyTerm>& terms,
                      std::span<const double> returns, std::span<const double> advantages,
                      double entropy_weight, LossReport& report);

// Backward, finiteness check, clipped SGD step on `params`. Throws
// DivergenceError when the loss or gradient is not finite.
LossReport apply_update(Tape& tape, Var loss, LossReport report, ParamStore& params,
                        const TrainConfig& config);

// ---------------------------------------------------------------------------
// Stage one

struct ExecutorSample {
  std::vector<Observation::Entry> rows;  // filtered; empty means Stay, no policy term
  int action_index = 1;
};

struct ExecutorSegment {
  // samples[i][t] for sensor i
  std::vector<std::vector<ExecutorSample>> samples;
  std::vector<std::vector<double>> rewards;
  std::vector<double> bootstrap;  // per sensor
};

// Builds the stage-one loss for a recorded segment. `advantages` may pin the
// advantage constants (see actor_critic_loss).
Var executor_loss(Tape& tape, ExecutorNet& net, const ExecutorSegment& segment,
                  const TrainConfig& config, LossReport& report,
                  std::span<const double> advantages = {});

// ---------------------------------------------------------------------------
// Stage two

struct CoordinatorSample {
  Observation obs;
  GoalMap goals;
};

struct CoordinatorSegment {
  std::vector<CoordinatorSample> samples;
  std::vector<double> rewards;  // macro-rewards
  double bootstrap = 0.0;
};

Var coordinator_loss(Tape& tape, CoordinatorNet& net, const CoordinatorSegment& segment,
                     const TrainConfig& config, LossReport& report,
                     std::span<const double> advantages = {});

// ---------------------------------------------------------------------------

struct EpisodeStats {
  int episode = 0;
  double mean_reward = 0.0;  // stage 1: mean r^L; stage 2: mean team reward
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double grad_norm = 0.0;  // mean pre-clip gradient norm
  int updates = 0;
};

struct TrainResult {
  std::vector<EpisodeStats> episodes;  // ordered by episode index
  int total_updates = 0;
  bool diverged = false;
  std::string diagnostics;
};

using ProgressCallback = std::function<void(const EpisodeStats&)>;

TrainResult train_executor(const EnvConfig& env, const TrainConfig& config, ExecutorNet& net,
                           const ProgressCallback& progress = {});

// `executor` null means scripted executors.
TrainResult train_coordinator(const EnvConfig& env, const TrainConfig& config, CoordinatorNet& net,
                              ExecutorNet* executor, const ProgressCallback& progress = {});

// Progress CSV: header "episode,mean_reward,policy_loss,value_loss,entropy,updates".
void write_progress_csv(std::ostream& out, const TrainResult& result, const std::string& manifest);

}  // namespace hitmac

namespace hitmac {

// Finite-difference checks of the full stage losses at random initialization,
// on a short segment collected from the environment with seed `seed`.
GradCheckReport coordinator_gradcheck(const EnvConfig& env, std::uint64_t seed, double eps,
                                      Eigen::Index hidden = kHiddenUnits);
GradCheckReport executor_gradcheck(const EnvConfig& env, std::uint64_t seed, double eps,
                                   Eigen::Index hidden = kHiddenUnits);

}  // namespace hitmac

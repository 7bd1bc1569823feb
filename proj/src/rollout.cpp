#include "hitmac/rollout.hpp"

#include <cmath>

#include "hitmac/baselines.hpp"

namespace hitmac {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 over a combination of both inputs
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<Action> RandomController::act(const WorldState& state, const Observation&,
                                          std::optional<GoalMap>& goals) {
  goals.reset();
  std::vector<Action> a(state.sensors.size());
  for (auto& x : a) x = random_action(rng_);
  return a;
}

std::vector<Action> ScriptedController::act(const WorldState& state, const Observation&,
                                            std::optional<GoalMap>& goals) {
  if (state.t % config_.macro_interval == 0 || current_.n() != state.n() || current_.m() != state.m()) {
    current_ = distance_goal_generation(state, config_);
  }
  goals = current_;
  return scripted_joint_action(state, current_, config_);
}

std::vector<Action> IlpController::act(const WorldState& state, const Observation&,
                                       std::optional<GoalMap>& goals) {
  goals.reset();
  return ilp_joint_action(state, config_);
}

HierarchicalController::HierarchicalController(const EnvConfig& config, CoordinatorNet* coordinator,
                                               ExecutorNet* executor, bool greedy)
    : config_(config), coordinator_(coordinator), executor_(executor), greedy_(greedy) {}

std::string HierarchicalController::name() const {
  std::string c = coordinator_ != nullptr ? "hitmac" : "random-goal";
  return executor_ != nullptr ? c : c + "+scripted";
}

std::vector<Action> HierarchicalController::act(const WorldState& state, const Observation& obs,
                                                std::optional<GoalMap>& goals) {
  if (state.t % config_.macro_interval == 0 || current_.n() != state.n() || current_.m() != state.m()) {
    if (coordinator_ != nullptr) {
      Tape tape(false);
      Var logits = coordinator_->assignment_logits(tape, coordinator_->encode(tape, obs));
      Var probs = tape.sigmoid(logits);
      current_ = coordinator_act(tape.value(probs), state.n(), state.m(), rng_, greedy_).goals;
    } else {
      current_ = random_goal(state.n(), state.m(), rng_);
    }
  }
  goals = current_;
  if (executor_ == nullptr) return scripted_joint_action(state, current_, config_);
  std::vector<Action> actions(state.sensors.size(), 0);
  for (int i = 0; i < state.n(); ++i) {
    const auto rows = goal_filter(obs.row(i), current_.row(i));
    actions[i] = executor_act(*executor_, rows, rng_, greedy_).action;
  }
  return actions;
}

EpisodeTrace run_episode(const EnvConfig& config, Controller& controller) {
  auto [state, obs] = reset(config);
  controller.begin_episode(mix_seed(config.seed, 0xC0117011ULL));
  EpisodeTrace trace;
  trace.steps.reserve(static_cast<std::size_t>(config.episode_length));
  bool done = false;
  while (!done) {
    std::optional<GoalMap> goals;
    std::vector<Action> actions = controller.act(state, obs, goals);
    StepResult r = step(state, actions, config);
    obs = r.observation;
    done = r.done;
    trace.record(state, std::move(actions), std::move(goals), std::move(r));
  }
  return trace;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  return {mean, std::sqrt(var)};
}

}  // namespace

EvalSummary evaluate(const EnvConfig& config, Controller& controller, int episodes,
                     std::uint64_t base_seed, std::vector<EpisodeTrace>* traces) {
  if (episodes < 1) throw std::invalid_argument("evaluate: episodes must be >= 1");
  EvalSummary s;
  s.policy = controller.name();
  s.n_sensors = config.n_sensors;
  s.n_targets = config.n_targets;
  s.episodes = episodes;
  std::vector<double> crs;
  std::vector<double> ags;
  for (int e = 0; e < episodes; ++e) {
    EnvConfig c = config;
    c.seed = mix_seed(base_seed, static_cast<std::uint64_t>(e));
    EpisodeTrace trace = run_episode(c, controller);
    const Metrics m = metrics(trace, c);
    crs.push_back(m.coverage_rate);
    if (std::isfinite(m.average_gain)) {
      ags.push_back(m.average_gain);
    } else {
      ++s.ag_infinite;
    }
    if (traces != nullptr) traces->push_back(std::move(trace));
  }
  std::tie(s.cr_mean, s.cr_std) = mean_std(crs);
  std::tie(s.ag_mean, s.ag_std) = mean_std(ags);
  return s;
}

}  // namespace hitmac

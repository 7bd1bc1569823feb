#include "hitmac/env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

namespace hitmac {

namespace {

constexpr double kNoCoveragePenalty = -0.1;

double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

// Mirror a coordinate back into [0, hi]. Returns true when a wall was hit.
bool reflect(double& v, double hi) {
  bool hit = false;
  // A single step never exceeds the arena size, but loop for safety on
  // degenerate (very thin) arenas.
  for (int guard = 0; guard < 8 && (v < 0.0 || v > hi); ++guard) {
    v = v < 0.0 ? -v : 2.0 * hi - v;
    hit = true;
  }
  if (v < 0.0 || v > hi) v = std::clamp(v, 0.0, hi);
  return hit;
}

}  // namespace

void EnvConfig::validate() const {
  if (n_sensors < 1) throw ConfigError("n_sensors must be >= 1");
  if (n_targets < 1) throw ConfigError("n_targets must be >= 1");
  if (!(arena_width > 0.0) || !(arena_height > 0.0)) throw ConfigError("arena must have positive area");
  if (!(rho_max > 0.0)) throw ConfigError("rho_max must be > 0");
  if (!(alpha_max > 0.0 && alpha_max <= 180.0)) throw ConfigError("alpha_max must be in (0, 180]");
  if (!(rotation_step > 0.0)) throw ConfigError("rotation_step must be > 0");
  if (!(max_target_speed >= 0.0)) throw ConfigError("max_target_speed must be >= 0");
  if (!(heading_noise_sigma >= 0.0)) throw ConfigError("heading_noise_sigma must be >= 0");
  if (episode_length < 1) throw ConfigError("episode_length must be >= 1");
  if (!(cost_weight >= 0.0)) throw ConfigError("cost_weight must be >= 0");
  if (macro_interval < 1) throw ConfigError("macro_interval must be >= 1");
}

void to_json(nlohmann::json& j, const EnvConfig& c) {
  j = nlohmann::json{{"n_sensors", c.n_sensors},
                     {"n_targets", c.n_targets},
                     {"arena_width", c.arena_width},
                     {"arena_height", c.arena_height},
                     {"rho_max", c.rho_max},
                     {"alpha_max", c.alpha_max},
                     {"rotation_step", c.rotation_step},
                     {"max_target_speed", c.max_target_speed},
                     {"heading_noise_sigma", c.heading_noise_sigma},
                     {"episode_length", c.episode_length},
                     {"cost_weight", c.cost_weight},
                     {"macro_interval", c.macro_interval},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, EnvConfig& c) {
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("n_sensors", c.n_sensors);
  get("n_targets", c.n_targets);
  get("arena_width", c.arena_width);
  get("arena_height", c.arena_height);
  get("rho_max", c.rho_max);
  get("alpha_max", c.alpha_max);
  get("rotation_step", c.rotation_step);
  get("max_target_speed", c.max_target_speed);
  get("heading_noise_sigma", c.heading_noise_sigma);
  get("episode_length", c.episode_length);
  get("cost_weight", c.cost_weight);
  get("macro_interval", c.macro_interval);
  get("seed", c.seed);
}

std::vector<int> GoalMap::assigned(int i) const {
  std::vector<int> out;
  for (int j = 0; j < m_; ++j) {
    if ((*this)(i, j)) out.push_back(j);
  }
  return out;
}

std::size_t GoalMap::count() const {
  std::size_t c = 0;
  for (auto b : bits_) c += b;
  return c;
}

std::pair<WorldState, Observation> reset(const EnvConfig& config) {
  config.validate();
  WorldState s;
  s.rng.seed(config.seed);
  std::uniform_real_distribution<double> ux(0.0, config.arena_width);
  std::uniform_real_distribution<double> uy(0.0, config.arena_height);
  std::uniform_real_distribution<double> uangle(-180.0, 180.0);
  std::uniform_real_distribution<double> uspeed(0.0, config.max_target_speed);

  s.sensors.resize(config.n_sensors);
  for (auto& p : s.sensors) {
    p.x = ux(s.rng);
    p.y = uy(s.rng);
    p.delta = normalize_angle(uangle(s.rng));
  }
  s.targets.resize(config.n_targets);
  for (auto& tg : s.targets) {
    tg.x = ux(s.rng);
    tg.y = uy(s.rng);
    tg.speed = uspeed(s.rng);
    tg.heading = normalize_angle(uangle(s.rng));
  }
  s.t = 0;
  Observation obs = observe(s, config);
  return {std::move(s), std::move(obs)};
}

Observation observe(const WorldState& state, const EnvConfig& config) {
  const int n = state.n();
  const int m = state.m();
  Observation obs(n, m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      const PolarRelation rel = relative_polar(state.sensors[i], state.targets[j].position());
      obs.at(i, j) = {static_cast<double>(i + 1) / n, static_cast<double>(j + 1) / m,
                      rel.rho / config.rho_max, rel.alpha / 180.0};
    }
  }
  return obs;
}

std::vector<bool> coverage_flags(const WorldState& state, const EnvConfig& config) {
  std::vector<bool> covered(state.targets.size(), false);
  for (std::size_t j = 0; j < state.targets.size(); ++j) {
    for (const auto& sensor : state.sensors) {
      if (is_covered(relative_polar(sensor, state.targets[j].position()), config.rho_max,
                     config.alpha_max)) {
        covered[j] = true;
        break;
      }
    }
  }
  return covered;
}

double coverage_rate(const std::vector<bool>& covered) {
  if (covered.empty()) return 0.0;
  std::size_t c = 0;
  for (bool b : covered) c += b ? 1 : 0;
  return static_cast<double>(c) / static_cast<double>(covered.size());
}

namespace {

double team_reward_from_flags(const std::vector<bool>& covered) {
  std::size_t c = 0;
  for (bool b : covered) c += b ? 1 : 0;
  if (c == 0) return kNoCoveragePenalty;
  return static_cast<double>(c) / static_cast<double>(covered.size());
}

}  // namespace

double team_reward(const WorldState& state, const EnvConfig& config) {
  return team_reward_from_flags(coverage_flags(state, config));
}

double rotation_cost(const Pose& before, const Pose& after, const EnvConfig& config) {
  return std::abs(angle_difference(after.delta, before.delta)) / config.rotation_step;
}

double executor_reward(const WorldState& state_prev, const WorldState& state, int i,
                       std::span<const int> assigned, const EnvConfig& config) {
  const Pose& sensor = state.sensors.at(i);
  double tracking = 0.0;
  if (!assigned.empty()) {
    for (int j : assigned) {
      const PolarRelation rel = relative_polar(sensor, state.targets.at(j).position());
      tracking += is_covered(rel, config.rho_max, config.alpha_max)
                      ? 1.0 - std::abs(rel.alpha) / config.alpha_max
                      : -1.0;
    }
    tracking /= static_cast<double>(assigned.size());
  }
  return tracking - config.cost_weight * rotation_cost(state_prev.sensors.at(i), sensor, config);
}

StepResult step(WorldState& state, std::span<const Action> joint_action,
                const EnvConfig& config) {
  if (joint_action.size() != state.sensors.size()) {
    throw std::invalid_argument("step: action vector length must equal the sensor count");
  }
  if (state.t >= config.episode_length) {
    throw StateError("step: episode is already done");
  }
  StepResult result;
  result.per_sensor_cost.resize(state.sensors.size());
  for (std::size_t i = 0; i < state.sensors.size(); ++i) {
    const Action a = joint_action[i];
    if (a < -1 || a > 1) throw std::invalid_argument("step: action must be -1, 0 or +1");
    Pose& p = state.sensors[i];
    const Pose before = p;
    p.delta = normalize_angle(p.delta + a * config.rotation_step);
    result.per_sensor_cost[i] = rotation_cost(before, p, config);
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  for (auto& tg : state.targets) {
    tg.heading = normalize_angle(tg.heading + config.heading_noise_sigma * noise(state.rng));
    const double rad = deg2rad(tg.heading);
    tg.x += tg.speed * std::cos(rad);
    tg.y += tg.speed * std::sin(rad);
    if (reflect(tg.x, config.arena_width)) tg.heading = normalize_angle(180.0 - tg.heading);
    if (reflect(tg.y, config.arena_height)) tg.heading = normalize_angle(-tg.heading);
  }
  ++state.t;

  result.covered_flags = coverage_flags(state, config);
  result.team_reward = team_reward_from_flags(result.covered_flags);
  result.observation = observe(state, config);
  result.done = state.t >= config.episode_length;
  return result;
}

void EpisodeTrace::record(const WorldState& state, std::vector<Action> actions,
                          std::optional<GoalMap> goals, StepResult result) {
  TraceStep s;
  s.sensors = state.sensors;
  s.targets = state.targets;
  s.t = state.t;
  s.actions = std::move(actions);
  s.goals = std::move(goals);
  s.result = std::move(result);
  steps.push_back(std::move(s));
}

Metrics metrics(const EpisodeTrace& trace, const EnvConfig& config) {
  (void)config;
  if (trace.steps.empty()) throw std::invalid_argument("metrics: empty trace");
  double cr = 0.0;
  double cost = 0.0;
  std::size_t cost_terms = 0;
  for (const auto& s : trace.steps) {
    cr += coverage_rate(s.result.covered_flags);
    for (double c : s.result.per_sensor_cost) cost += c;
    cost_terms += s.result.per_sensor_cost.size();
  }
  Metrics out;
  out.coverage_rate = cr / static_cast<double>(trace.steps.size());
  out.mean_cost = cost_terms == 0 ? 0.0 : cost / static_cast<double>(cost_terms);
  out.average_gain = out.mean_cost == 0.0 ? std::numeric_limits<double>::infinity()
                                          : out.coverage_rate / out.mean_cost;
  return out;
}

nlohmann::ordered_json trace_step_json(const TraceStep& step, int episode, const std::string& manifest) {
  nlohmann::ordered_json j;
  j["manifest"] = manifest;
  j["episode"] = episode;
  j["step"] = step.t;
  std::vector<double> deltas;
  for (const auto& p : step.sensors) deltas.push_back(p.delta);
  j["sensor_deltas"] = deltas;
  std::vector<std::array<double, 2>> targets;
  for (const auto& tg : step.targets) targets.push_back({tg.x, tg.y});
  j["target_positions"] = targets;
  j["actions"] = step.actions;
  if (step.goals) {
    std::vector<std::vector<int>> rows;
    for (int i = 0; i < step.goals->n(); ++i) {
      std::vector<int> r;
      for (auto b : step.goals->row(i)) r.push_back(b);
      rows.push_back(std::move(r));
    }
    j["goal_map"] = rows;
  } else {
    j["goal_map"] = nullptr;
  }
  j["team_reward"] = step.result.team_reward;
  j["costs"] = step.result.per_sensor_cost;
  return j;
}

void write_trace_jsonl(std::ostream& out, const EpisodeTrace& trace, int episode,
                       const std::string& manifest) {
  for (const auto& s : trace.steps) {
    out << trace_step_json(s, episode, manifest).dump() << '\n';
  }
}

}  // namespace hitmac

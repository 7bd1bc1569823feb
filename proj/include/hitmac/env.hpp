#pragma once

// Directional sensor network simulator: n fixed sensors with rotatable
// sensing wedges and m targets on a random walk inside a rectangular arena.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hitmac/geometry.hpp"

namespace hitmac {

using Rng = std::mt19937_64;

// Rotation command: -1 turn left (delta -= z), 0 stay, +1 turn right (delta += z).
using Action = int;

struct EnvConfig {
  int n_sensors = 4;
  int n_targets = 5;
  double arena_width = 1000.0;
  double arena_height = 1000.0;
  double rho_max = 400.0;
  double alpha_max = 45.0;
  double rotation_step = 5.0;  // z_delta
  double max_target_speed = 10.0;
  double heading_noise_sigma = 15.0;
  int episode_length = 100;  // T
  double cost_weight = 0.01;  // beta
  int macro_interval = 10;    // k
  std::uint64_t seed = 0;

  // Throws ConfigError on any violated invariant.
  void validate() const;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

void to_json(nlohmann::json& j, const EnvConfig& c);
// Missing fields keep their current value.
void from_json(const nlohmann::json& j, EnvConfig& c);

struct Target {
  double x = 0.0;
  double y = 0.0;
  double speed = 0.0;
  double heading = 0.0;  // degrees

  Point position() const { return {x, y}; }
};

struct WorldState {
  std::vector<Pose> sensors;
  std::vector<Target> targets;
  int t = 0;
  Rng rng;

  int n() const { return static_cast<int>(sensors.size()); }
  int m() const { return static_cast<int>(targets.size()); }
};

// n x m grid of normalized relations (i, j, rho, alpha).
class Observation {
 public:
  static constexpr int kFeatures = 4;
  using Entry = std::array<double, kFeatures>;

  Observation() = default;
  Observation(int n, int m) : n_(n), m_(m), entries_(static_cast<std::size_t>(n) * m) {}

  int n() const { return n_; }
  int m() const { return m_; }
  const Entry& at(int i, int j) const { return entries_[index(i, j)]; }
  Entry& at(int i, int j) { return entries_[index(i, j)]; }
  std::span<const Entry> row(int i) const {
    return std::span<const Entry>(entries_).subspan(static_cast<std::size_t>(i) * m_, m_);
  }
  std::span<const Entry> entries() const { return entries_; }

 private:
  std::size_t index(int i, int j) const { return static_cast<std::size_t>(i) * m_ + j; }

  int n_ = 0;
  int m_ = 0;
  std::vector<Entry> entries_;
};

// n x m binary sensor-to-target assignment. Row i is the target set M_i.
class GoalMap {
 public:
  GoalMap() = default;
  GoalMap(int n, int m) : n_(n), m_(m), bits_(static_cast<std::size_t>(n) * m, 0) {}

  int n() const { return n_; }
  int m() const { return m_; }
  bool operator()(int i, int j) const { return bits_[index(i, j)] != 0; }
  void set(int i, int j, bool v) { bits_[index(i, j)] = v ? 1 : 0; }
  std::span<const std::uint8_t> row(int i) const {
    return std::span<const std::uint8_t>(bits_).subspan(static_cast<std::size_t>(i) * m_, m_);
  }
  std::vector<int> assigned(int i) const;
  std::size_t count() const;

  bool operator==(const GoalMap&) const = default;

 private:
  std::size_t index(int i, int j) const { return static_cast<std::size_t>(i) * m_ + j; }

  int n_ = 0;
  int m_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct StepResult {
  Observation observation;
  double team_reward = 0.0;
  std::vector<bool> covered_flags;
  std::vector<double> per_sensor_cost;
  bool done = false;
};

// Deterministic in config.seed. Throws ConfigError on an invalid config.
std::pair<WorldState, Observation> reset(const EnvConfig& config);

Observation observe(const WorldState& state, const EnvConfig& config);

// Rotates sensors, then advances targets one random-walk step. Throws
// std::invalid_argument on wrong action arity or values, StateError when
// the episode is already over.
StepResult step(WorldState& state, std::span<const Action> joint_action,
                const EnvConfig& config);

// I_j for every target.
std::vector<bool> coverage_flags(const WorldState& state, const EnvConfig& config);
double coverage_rate(const std::vector<bool>& covered);

// (1/m) sum_j I_j, or -0.1 when nothing is covered.
double team_reward(const WorldState& state, const EnvConfig& config);

// |delta_i change| / z_delta along the shortest arc.
double rotation_cost(const Pose& before, const Pose& after, const EnvConfig& config);

// Goal-conditioned tracking reward for sensor i. An empty assignment scores 0
// before the rotation cost.
double executor_reward(const WorldState& state_prev, const WorldState& state, int i,
                       std::span<const int> assigned, const EnvConfig& config);

struct TraceStep {
  std::vector<Pose> sensors;
  std::vector<Target> targets;
  int t = 0;
  std::vector<Action> actions;
  std::optional<GoalMap> goals;
  StepResult result;
};

struct EpisodeTrace {
  std::vector<TraceStep> steps;

  void record(const WorldState& state, std::vector<Action> actions,
              std::optional<GoalMap> goals, StepResult result);
};

struct Metrics {
  double coverage_rate = 0.0;  // CR
  double mean_cost = 0.0;
  double average_gain = 0.0;   // AG; +inf when mean_cost == 0
};

// Throws std::invalid_argument on an empty trace.
Metrics metrics(const EpisodeTrace& trace, const EnvConfig& config);

// One JSON object per step.
nlohmann::ordered_json trace_step_json(const TraceStep& step, int episode, const std::string& manifest);
void write_trace_jsonl(std::ostream& out, const EpisodeTrace& trace, int episode,
                       const std::string& manifest);

}  // namespace hitmac

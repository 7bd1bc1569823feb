#pragma once

// Controllers that drive a full episode and the evaluation protocol built on
// them (mean/std of CR and AG over seeded episodes).

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hitmac/env.hpp"
#include "hitmac/policy.hpp"

namespace hitmac {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  virtual void begin_episode(std::uint64_t seed) { (void)seed; }
  // Goal map in effect for this step, if the controller uses one, is written
  // to `goals`.
  virtual std::vector<Action> act(const WorldState& state, const Observation& obs,
                                  std::optional<GoalMap>& goals) = 0;
};

// Uniform random rotation for every sensor.
class RandomController : public Controller {
 public:
  explicit RandomController(const EnvConfig& config) : config_(config) {}
  std::string name() const override { return "random"; }
  void begin_episode(std::uint64_t seed) override { rng_.seed(seed); }
  std::vector<Action> act(const WorldState& state, const Observation& obs,
                          std::optional<GoalMap>& goals) override;

 private:
  EnvConfig config_;
  Rng rng_;
};

// Distance-generated goals refreshed every k steps, scripted executors.
class ScriptedController : public Controller {
 public:
  explicit ScriptedController(const EnvConfig& config) : config_(config) {}
  std::string name() const override { return "scripted"; }
  std::vector<Action> act(const WorldState& state, const Observation& obs,
                          std::optional<GoalMap>& goals) override;

 private:
  EnvConfig config_;
  GoalMap current_;
};

// Exact coverage assignment re-solved every step.
class IlpController : public Controller {
 public:
  explicit IlpController(const EnvConfig& config) : config_(config) {}
  std::string name() const override { return "ilp"; }
  std::vector<Action> act(const WorldState& state, const Observation& obs,
                          std::optional<GoalMap>& goals) override;

 private:
  EnvConfig config_;
};

// Coordinator every k steps (learned, or random goals when `coordinator` is
// null) with learned executors (or scripted when `executor` is null).
class HierarchicalController : public Controller {
 public:
  HierarchicalController(const EnvConfig& config, CoordinatorNet* coordinator, ExecutorNet* executor,
                         bool greedy = true);
  std::string name() const override;
  void begin_episode(std::uint64_t seed) override { rng_.seed(seed); }
  std::vector<Action> act(const WorldState& state, const Observation& obs,
                          std::optional<GoalMap>& goals) override;

 private:
  EnvConfig config_;
  CoordinatorNet* coordinator_;
  ExecutorNet* executor_;
  bool greedy_;
  Rng rng_;
  GoalMap current_;
};

EpisodeTrace run_episode(const EnvConfig& config, Controller& controller);

struct EvalSummary {
  std::string policy;
  int n_sensors = 0;
  int n_targets = 0;
  int episodes = 0;
  double cr_mean = 0.0;
  double cr_std = 0.0;
  double ag_mean = 0.0;  // over episodes with finite AG
  double ag_std = 0.0;
  int ag_infinite = 0;   // episodes excluded from the AG average
};

// Episode e runs with env seed mix_seed(base_seed, e). Traces are appended to
// `traces` when non-null.
EvalSummary evaluate(const EnvConfig& config, Controller& controller, int episodes,
                     std::uint64_t base_seed, std::vector<EpisodeTrace>* traces = nullptr);

}  // namespace hitmac

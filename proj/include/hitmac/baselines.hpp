#pragma once

// Non-learned policies: scripted centroid tracking, distance-based goal
// generation, exact coverage-maximizing direction assignment, random play.

#include <span>
#include <vector>

#include "hitmac/env.hpp"

namespace hitmac {

inline constexpr int kDirections = 4;

// Chosen direction per sensor: 0 = none, 1..4 = direction index. Direction j
// points along delta_i + (j - 1) * 90 degrees, so direction 2 is reached by
// turning right (increasing delta) and direction 4 by turning left.
struct DirectionAssignment {
  std::vector<int> direction;
  int objective = 0;               // z, number of covered targets
  std::vector<bool> covered;       // y_k

  bool x(int i, int j) const { return direction.at(i) == j; }
};

// clip(floor(beta / z_delta), -1, 1) where beta is the angle error to the
// centroid of the assigned targets. Empty assignment stays.
Action scripted_executor_action(const WorldState& state, int i, std::span<const int> assigned,
                                const EnvConfig& config);

std::vector<Action> scripted_joint_action(const WorldState& state, const GoalMap& goals,
                                          const EnvConfig& config);

// g_ij = 1 iff rho_ij < rho_max, independent of orientation.
GoalMap distance_goal_generation(const WorldState& state, const EnvConfig& config);

// a^i_{j,k}: whether target k lies in the wedge of sensor i's direction j.
bool direction_covers(const WorldState& state, int i, int direction, int k,
                      const EnvConfig& config);

// Maximum coverage over one direction per sensor, by depth-first
// branch-and-bound with the bound "covered so far + uncovered targets some
// remaining sensor could still reach".
DirectionAssignment exact_coverage_assignment(const WorldState& state, const EnvConfig& config);

// 0 (no direction) and 1 -> stay, 2 and 3 -> turn right, 4 -> turn left.
Action direction_to_action(int direction);

std::vector<Action> ilp_joint_action(const WorldState& state, const EnvConfig& config);

GoalMap random_goal(int n, int m, Rng& rng);
Action random_action(Rng& rng);

}  // namespace hitmac

#include "hitmac/baselines.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace hitmac {

Action scripted_executor_action(const WorldState& state, int i, std::span<const int> assigned,
                                const EnvConfig& config) {
  if (assigned.empty()) return 0;
  Point centroid;
  for (int j : assigned) {
    centroid.x += state.targets.at(j).x;
    centroid.y += state.targets.at(j).y;
  }
  centroid.x /= static_cast<double>(assigned.size());
  centroid.y /= static_cast<double>(assigned.size());
  const Pose& sensor = state.sensors.at(i);
  const double beta = normalize_angle(bearing({sensor.x, sensor.y}, centroid) - sensor.delta);
  const double steps = std::floor(beta / config.rotation_step);
  return static_cast<Action>(std::clamp(steps, -1.0, 1.0));
}

std::vector<Action> scripted_joint_action(const WorldState& state, const GoalMap& goals,
                                          const EnvConfig& config) {
  std::vector<Action> actions(state.sensors.size(), 0);
  for (int i = 0; i < state.n(); ++i) {
    const auto assigned = goals.assigned(i);
    actions[i] = scripted_executor_action(state, i, assigned, config);
  }
  return actions;
}

GoalMap distance_goal_generation(const WorldState& state, const EnvConfig& config) {
  GoalMap g(state.n(), state.m());
  for (int i = 0; i < state.n(); ++i) {
    const Pose& s = state.sensors[i];
    for (int j = 0; j < state.m(); ++j) {
      const double rho = std::hypot(state.targets[j].x - s.x, state.targets[j].y - s.y);
      g.set(i, j, rho < config.rho_max);
    }
  }
  return g;
}

bool direction_covers(const WorldState& state, int i, int direction, int k,
                      const EnvConfig& config) {
  Pose axis = state.sensors.at(i);
  axis.delta = normalize_angle(axis.delta + (direction - 1) * 90.0);
  return is_covered(relative_polar(axis, state.targets.at(k).position()), config.rho_max,
                    config.alpha_max);
}

namespace {

class Bits {
 public:
  explicit Bits(int size = 0) : words_((static_cast<std::size_t>(size) + 63) / 64, 0) {}

  void set(int k) { words_[k / 64] |= std::uint64_t{1} << (k % 64); }
  bool test(int k) const { return (words_[k / 64] >> (k % 64)) & 1U; }
  Bits& operator|=(const Bits& o) {
    for (std::size_t w = 0; w < words_.size(); ++w) words_[w] |= o.words_[w];
    return *this;
  }
  int count() const {
    int c = 0;
    for (auto w : words_) c += std::popcount(w);
    return c;
  }
  // |other \ this|
  int count_new(const Bits& other) const {
    int c = 0;
    for (std::size_t w = 0; w < words_.size(); ++w) c += std::popcount(other.words_[w] & ~words_[w]);
    return c;
  }

 private:
  std::vector<std::uint64_t> words_;
};

struct Search {
  int n = 0;
  // wedge[i][j] = targets covered by sensor i facing direction j+1
  std::vector<std::array<Bits, kDirections>> wedge;
  // reach_suffix[i] = union over sensors >= i and all directions
  std::vector<Bits> reach_suffix;
  std::vector<int> current;
  std::vector<int> best;
  int best_z = -1;

  void run(int i, const Bits& covered) {
    const int z = covered.count();
    if (i == n) {
      if (z > best_z) {
        best_z = z;
        best = current;
      }
      return;
    }
    if (z + covered.count_new(reach_suffix[i]) <= best_z) return;
    for (int d = 0; d < kDirections; ++d) {
      current[i] = d + 1;
      Bits next = covered;
      next |= wedge[i][d];
      run(i + 1, next);
    }
  }
};

}  // namespace

DirectionAssignment exact_coverage_assignment(const WorldState& state, const EnvConfig& config) {
  const int n = state.n();
  const int m = state.m();
  DirectionAssignment out;
  out.direction.assign(n, 0);
  out.covered.assign(m, false);
  if (m == 0 || n == 0) return out;

  Search search;
  search.n = n;
  search.wedge.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < kDirections; ++d) {
      Bits b(m);
      for (int k = 0; k < m; ++k) {
        if (direction_covers(state, i, d + 1, k, config)) b.set(k);
      }
      search.wedge[i][d] = b;
    }
  }
  search.reach_suffix.assign(n + 1, Bits(m));
  for (int i = n - 1; i >= 0; --i) {
    search.reach_suffix[i] = search.reach_suffix[i + 1];
    for (int d = 0; d < kDirections; ++d) search.reach_suffix[i] |= search.wedge[i][d];
  }
  search.current.assign(n, 0);
  search.run(0, Bits(m));

  out.direction = search.best;
  Bits covered(m);
  for (int i = 0; i < n; ++i) covered |= search.wedge[i][out.direction[i] - 1];
  for (int k = 0; k < m; ++k) out.covered[k] = covered.test(k);
  out.objective = covered.count();
  return out;
}

Action direction_to_action(int direction) {
  switch (direction) {
    case 0:
    case 1:
      return 0;
    case 2:
    case 3:  // 180 degrees: either way works, right is fixed for reproducibility
      return 1;
    case 4:
      return -1;
    default:
      throw std::invalid_argument("direction_to_action: direction must be in 0..4");
  }
}

std::vector<Action> ilp_joint_action(const WorldState& state, const EnvConfig& config) {
  const DirectionAssignment a = exact_coverage_assignment(state, config);
  std::vector<Action> actions(a.direction.size());
  std::transform(a.direction.begin(), a.direction.end(), actions.begin(), direction_to_action);
  return actions;
}

GoalMap random_goal(int n, int m, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  GoalMap g(n, m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) g.set(i, j, coin(rng));
  }
  return g;
}

Action random_action(Rng& rng) {
  std::uniform_int_distribution<int> pick(-1, 1);
  return pick(rng);
}

}  // namespace hitmac

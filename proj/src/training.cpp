#include "hitmac/training.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <ostream>
#include <thread>

#include "hitmac/baselines.hpp"
#include "hitmac/rollout.hpp"

namespace hitmac {

void TrainConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must be in (0, 1)");
  if (!(entropy_weight >= 0.0)) throw ConfigError("entropy_weight must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (update_every < 1) throw ConfigError("update_every must be >= 1");
  if (episodes < 0) throw ConfigError("episodes must be >= 0");
  if (hidden < 1) throw ConfigError("hidden must be >= 1");
}

Stage parse_stage(const std::string& s) {
  if (s == "executor") return Stage::Executor;
  if (s == "coordinator") return Stage::Coordinator;
  throw std::invalid_argument("unknown stage '" + s + "' (expected executor or coordinator)");
}

std::string to_string(Stage s) { return s == Stage::Executor ? "executor" : "coordinator"; }

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"gamma", c.gamma},
                     {"entropy_weight", c.entropy_weight},
                     {"lr", c.lr},
                     {"clip_norm", c.clip_norm},
                     {"workers", c.workers},
                     {"update_every", c.update_every},
                     {"episodes", c.episodes},
                     {"seed", c.seed},
                     {"stage", to_string(c.stage)},
                     {"executor_policy", c.executor_policy},
                     {"hidden", c.hidden}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("gamma", c.gamma);
  get("entropy_weight", c.entropy_weight);
  get("lr", c.lr);
  get("clip_norm", c.clip_norm);
  get("workers", c.workers);
  get("update_every", c.update_every);
  get("episodes", c.episodes);
  get("seed", c.seed);
  if (j.contains("stage")) c.stage = parse_stage(j.at("stage").get<std::string>());
  get("executor_policy", c.executor_policy);
  get("hidden", c.hidden);
}

Returns compute_returns(std::span<const double> rewards, std::span<const double> values,
                        double bootstrap, double gamma) {
  if (rewards.size() != values.size()) throw std::invalid_argument("compute_returns: length mismatch");
  Returns out;
  out.returns.resize(rewards.size());
  out.advantages.resize(rewards.size());
  double running = bootstrap;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    running = rewards[t] + gamma * running;
    out.returns[t] = running;
    out.advantages[t] = running - values[t];
  }
  return out;
}

double macro_reward(std::span<const double> team_rewards) {
  if (team_rewards.empty()) throw std::invalid_argument("macro_reward: empty window");
  double s = 0.0;
  for (double r : team_rewards) s += r;
  return s / static_cast<double>(team_rewards.size());
}

Var actor_critic_loss(Tape& tape, const std::vector<PolicyTerm>& terms,
                      std::span<const double> returns, std::span<const double> advantages,
                      double entropy_weight, LossReport& report) {
  if (terms.size() != returns.size()) throw std::invalid_argument("actor_critic_loss: length mismatch");
  if (!advantages.empty() && advantages.size() != terms.size()) {
    throw std::invalid_argument("actor_critic_loss: advantage count mismatch");
  }
  if (terms.empty()) throw std::invalid_argument("actor_critic_loss: empty segment");
  std::vector<Var> policy;
  std::vector<Var> value;
  std::vector<Var> entropy;
  report.advantages.clear();
  for (std::size_t t = 0; t < terms.size(); ++t) {
    const double advantage =
        advantages.empty() ? returns[t] - tape.item(terms[t].value) : advantages[t];
    report.advantages.push_back(advantage);
    policy.push_back(tape.scale(terms[t].log_prob, -advantage));
    value.push_back(tape.scale(tape.square(tape.sub(terms[t].value, tape.scalar(returns[t]))), 0.5));
    entropy.push_back(terms[t].entropy);
  }
  Var policy_loss = tape.sum(tape.stack_rows(policy));
  Var value_loss = tape.sum(tape.stack_rows(value));
  Var entropy_sum = tape.sum(tape.stack_rows(entropy));
  Var total = tape.sub(tape.add(policy_loss, value_loss), tape.scale(entropy_sum, entropy_weight));
  report.policy_loss = tape.item(policy_loss);
  report.value_loss = tape.item(value_loss);
  report.entropy = tape.item(entropy_sum);
  report.total = tape.item(total);
  return total;
}

namespace {

void check_finite(const LossReport& report, const ParamStore& params) {
  if (!std::isfinite(report.total) || !std::isfinite(params.grad_norm())) {
    throw DivergenceError("non-finite loss: policy=" + std::to_string(report.policy_loss) +
                          " value=" + std::to_string(report.value_loss) +
                          " entropy=" + std::to_string(report.entropy));
  }
}

}  // namespace

LossReport apply_update(Tape& tape, Var loss, LossReport report, ParamStore& params,
                        const TrainConfig& config) {
  params.zero_grad();
  tape.backward(loss);
  check_finite(report, params);
  report.grad_norm = sgd_step(params, config.lr, config.clip_norm);
  return report;
}

// ---------------------------------------------------------------------------

Var executor_loss(Tape& tape, ExecutorNet& net, const ExecutorSegment& segment,
                  const TrainConfig& config, LossReport& report, std::span<const double> advantages) {
  std::vector<PolicyTerm> terms;
  std::vector<double> targets;
  for (std::size_t i = 0; i < segment.samples.size(); ++i) {
    const auto& samples = segment.samples[i];
    std::vector<double> values(samples.size(), 0.0);
    std::vector<ExecutorNet::Forward> fwd(samples.size());
    for (std::size_t t = 0; t < samples.size(); ++t) {
      if (samples[t].rows.empty()) continue;
      fwd[t] = net.forward(tape, samples[t].rows);
      values[t] = tape.item(fwd[t].value);
    }
    const Returns ret = compute_returns(segment.rewards[i], values, segment.bootstrap[i], config.gamma);
    for (std::size_t t = 0; t < samples.size(); ++t) {
      if (samples[t].rows.empty()) continue;
      Var lp = fwd[t].log_probs;
      Var ent = tape.neg(tape.sum(tape.mul(tape.exp(lp), lp)));
      terms.push_back({tape.pick(lp, 0, samples[t].action_index), ent, fwd[t].value});
      targets.push_back(ret.returns[t]);
    }
  }
  if (terms.empty()) {
    report = LossReport{};
    return tape.scalar(0.0);
  }
  return actor_critic_loss(tape, terms, targets, advantages, config.entropy_weight, report);
}

Var coordinator_loss(Tape& tape, CoordinatorNet& net, const CoordinatorSegment& segment,
                     const TrainConfig& config, LossReport& report, std::span<const double> advantages) {
  std::vector<PolicyTerm> terms;
  std::vector<double> values;
  for (const auto& s : segment.samples) {
    Var h = net.encode(tape, s.obs);
    Var logits = net.assignment_logits(tape, h);
    CoordinatorNet::Amc amc = net.amc_value(tape, h);
    terms.push_back({goal_log_prob(tape, logits, s.goals), goal_entropy(tape, logits), amc.value});
    values.push_back(tape.item(amc.value));
  }
  const Returns ret = compute_returns(segment.rewards, values, segment.bootstrap, config.gamma);
  return actor_critic_loss(tape, terms, ret.returns, advantages, config.entropy_weight, report);
}

// ---------------------------------------------------------------------------
// Asynchronous workers sharing one parameter set.

namespace {

template <class Net>
class SharedTrainer {
 public:
  SharedTrainer(Net& shared, const TrainConfig& config, const ProgressCallback& progress)
      : shared_(shared), config_(config), progress_(progress) {
    result_.episodes.resize(static_cast<std::size_t>(config.episodes));
  }

  // Computes gradients on the worker's local copy, applies them to the
  // shared parameters and refreshes the local copy.
  template <class BuildLoss>
  LossReport update(Net& local, BuildLoss&& build) {
    Tape tape(true);
    LossReport report;
    Var loss = build(tape, report);
    local.params().zero_grad();
    tape.backward(loss);
    check_finite(report, local.params());
    std::lock_guard<std::mutex> lock(mutex_);
    if (stop_) return report;
    shared_.params().zero_grad();
    shared_.params().accumulate_grads_from(local.params());
    report.grad_norm = sgd_step(shared_.params(), config_.lr, config_.clip_norm);
    local.params().copy_values_from(shared_.params());
    ++result_.total_updates;
    return report;
  }

  template <class RunEpisode>
  TrainResult run(RunEpisode&& run_episode) {
    auto worker = [&](int w) {
      Net local = [&] {
        std::lock_guard<std::mutex> lock(mutex_);
        return shared_;
      }();
      Rng rng(mix_seed(config_.seed, 0x5EED0000ULL + static_cast<std::uint64_t>(w)));
      while (true) {
        const int episode = next_episode_.fetch_add(1);
        if (episode >= config_.episodes) break;
        {
          std::lock_guard<std::mutex> lock(mutex_);
          if (stop_) break;
          local.params().copy_values_from(shared_.params());
        }
        try {
          EpisodeStats stats = run_episode(local, rng, episode);
          stats.episode = episode;
          std::lock_guard<std::mutex> lock(mutex_);
          result_.episodes[static_cast<std::size_t>(episode)] = stats;
          ++completed_;
          if (progress_) progress_(stats);
        } catch (const DivergenceError& e) {
          std::lock_guard<std::mutex> lock(mutex_);
          stop_ = true;
          result_.diverged = true;
          result_.diagnostics = e.what();
          break;
        }
      }
    };
    if (config_.workers == 1) {
      worker(0);
    } else {
      std::vector<std::thread> threads;
      for (int w = 0; w < config_.workers; ++w) threads.emplace_back(worker, w);
      for (auto& t : threads) t.join();
    }
    if (result_.diverged) result_.episodes.resize(static_cast<std::size_t>(completed_));
    return std::move(result_);
  }

 private:
  Net& shared_;
  const TrainConfig& config_;
  const ProgressCallback& progress_;
  std::mutex mutex_;
  std::atomic<int> next_episode_{0};
  bool stop_ = false;
  int completed_ = 0;
  TrainResult result_;
};

void accumulate(EpisodeStats& stats, const LossReport& r) {
  stats.policy_loss += r.policy_loss;
  stats.value_loss += r.value_loss;
  stats.entropy += r.entropy;
  stats.grad_norm += r.grad_norm;
  ++stats.updates;
}

void finish(EpisodeStats& stats) {
  if (stats.updates > 0) {
    stats.policy_loss /= stats.updates;
    stats.value_loss /= stats.updates;
    stats.entropy /= stats.updates;
    stats.grad_norm /= stats.updates;
  }
}

}  // namespace

TrainResult train_executor(const EnvConfig& env, const TrainConfig& config, ExecutorNet& net,
                           const ProgressCallback& progress) {
  env.validate();
  config.validate();
  SharedTrainer<ExecutorNet> trainer(net, config, progress);
  const int n = env.n_sensors;

  auto run_episode = [&](ExecutorNet& local, Rng& rng, int episode) {
    EnvConfig c = env;
    c.seed = mix_seed(config.seed, static_cast<std::uint64_t>(episode));
    auto [state, obs] = reset(c);
    GoalMap goals = distance_goal_generation(state, c);

    EpisodeStats stats;
    double reward_sum = 0.0;
    long reward_count = 0;
    ExecutorSegment segment;
    auto clear = [&] {
      segment.samples.assign(n, {});
      segment.rewards.assign(n, {});
      segment.bootstrap.assign(n, 0.0);
    };
    clear();

    bool done = false;
    int seg_len = 0;
    while (!done) {
      if (state.t % c.macro_interval == 0) goals = distance_goal_generation(state, c);
      std::vector<Action> actions(n, 0);
      for (int i = 0; i < n; ++i) {
        ExecutorSample sample;
        sample.rows = goal_filter(obs.row(i), goals.row(i));
        const ExecutorDecision d = executor_act(local, sample.rows, rng, false);
        actions[i] = d.action;
        sample.action_index = index_from_action(d.action);
        segment.samples[i].push_back(std::move(sample));
      }
      const WorldState prev = state;
      StepResult r = step(state, actions, c);
      for (int i = 0; i < n; ++i) {
        const auto assigned = goals.assigned(i);
        const double rl = executor_reward(prev, state, i, assigned, c);
        segment.rewards[i].push_back(rl);
        reward_sum += rl;
        ++reward_count;
      }
      obs = std::move(r.observation);
      done = r.done;
      ++seg_len;

      if (seg_len == config.update_every || done) {
        if (!done) {
          const GoalMap next_goals =
              state.t % c.macro_interval == 0 ? distance_goal_generation(state, c) : goals;
          for (int i = 0; i < n; ++i) {
            const auto rows = goal_filter(obs.row(i), next_goals.row(i));
            if (rows.empty()) continue;
            Tape tape(false);
            segment.bootstrap[i] = tape.item(local.forward(tape, rows).value);
          }
        }
        for (int i = 0; i < n; ++i) {
          const auto& samples = segment.samples[i];
          if (std::all_of(samples.begin(), samples.end(), [](const ExecutorSample& s) { return s.rows.empty(); })) {
            continue;
          }
          ExecutorSegment own;
          own.samples = {samples};
          own.rewards = {segment.rewards[i]};
          own.bootstrap = {segment.bootstrap[i]};
          const LossReport rep = trainer.update(local, [&](Tape& tape, LossReport& report) {
            return executor_loss(tape, local, own, config, report);
          });
          accumulate(stats, rep);
        }
        clear();
        seg_len = 0;
      }
    }
    stats.mean_reward = reward_count > 0 ? reward_sum / static_cast<double>(reward_count) : 0.0;
    finish(stats);
    return stats;
  };
  return trainer.run(run_episode);
}

TrainResult train_coordinator(const EnvConfig& env, const TrainConfig& config, CoordinatorNet& net,
                              ExecutorNet* executor, const ProgressCallback& progress) {
  env.validate();
  config.validate();
  SharedTrainer<CoordinatorNet> trainer(net, config, progress);
  const int n = env.n_sensors;
  const int m = env.n_targets;

  auto run_episode = [&](CoordinatorNet& local, Rng& rng, int episode) {
    EnvConfig c = env;
    c.seed = mix_seed(config.seed, static_cast<std::uint64_t>(episode));
    auto [state, obs] = reset(c);

    EpisodeStats stats;
    double team_sum = 0.0;
    long team_count = 0;
    CoordinatorSegment segment;
    bool done = false;
    while (!done) {
      CoordinatorSample sample;
      sample.obs = obs;
      {
        Tape tape(false);
        Var probs = tape.sigmoid(local.assignment_logits(tape, local.encode(tape, obs)));
        sample.goals = coordinator_act(tape.value(probs), n, m, rng, false).goals;
      }
      std::vector<double> window;
      for (int s = 0; s < c.macro_interval && !done; ++s) {
        std::vector<Action> actions;
        if (executor == nullptr) {
          actions = scripted_joint_action(state, sample.goals, c);
        } else {
          actions.assign(n, 0);
          for (int i = 0; i < n; ++i) {
            const auto rows = goal_filter(obs.row(i), sample.goals.row(i));
            actions[i] = executor_act(*executor, rows, rng, true).action;
          }
        }
        StepResult r = step(state, actions, c);
        window.push_back(r.team_reward);
        team_sum += r.team_reward;
        ++team_count;
        obs = std::move(r.observation);
        done = r.done;
      }
      segment.samples.push_back(std::move(sample));
      segment.rewards.push_back(macro_reward(window));

      if (static_cast<int>(segment.samples.size()) * c.macro_interval >= config.update_every || done) {
        segment.bootstrap = 0.0;
        if (!done) {
          Tape tape(false);
          segment.bootstrap = tape.item(local.amc_value(tape, local.encode(tape, obs)).value);
        }
        const LossReport rep = trainer.update(local, [&](Tape& tape, LossReport& report) {
          return coordinator_loss(tape, local, segment, config, report);
        });
        accumulate(stats, rep);
        segment = CoordinatorSegment{};
      }
    }
    stats.mean_reward = team_count > 0 ? team_sum / static_cast<double>(team_count) : 0.0;
    finish(stats);
    return stats;
  };
  return trainer.run(run_episode);
}

void write_progress_csv(std::ostream& out, const TrainResult& result, const std::string& manifest) {
  out << "# manifest=" << manifest << '\n';
  out << "episode,mean_reward,policy_loss,value_loss,entropy,updates\n";
  char buf[256];
  for (const auto& s : result.episodes) {
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g,%d\n", s.episode, s.mean_reward,
                  s.policy_loss, s.value_loss, s.entropy, s.updates);
    out << buf;
  }
}

}  // namespace hitmac

namespace hitmac {

GradCheckReport coordinator_gradcheck(const EnvConfig& env, std::uint64_t seed, double eps,
                                      Eigen::Index hidden) {
  Rng rng(seed);
  CoordinatorNet net(rng, hidden);
  TrainConfig config;
  EnvConfig c = env;
  c.seed = seed;
  auto [state, obs] = reset(c);
  CoordinatorSegment segment;
  for (int macro = 0; macro < 3; ++macro) {
    Tape tape(false);
    Var probs = tape.sigmoid(net.assignment_logits(tape, net.encode(tape, obs)));
    CoordinatorSample sample{obs, coordinator_act(tape.value(probs), c.n_sensors, c.n_targets, rng).goals};
    std::vector<double> window;
    for (int s = 0; s < c.macro_interval && state.t < c.episode_length; ++s) {
      StepResult r = step(state, scripted_joint_action(state, sample.goals, c), c);
      window.push_back(r.team_reward);
      obs = r.observation;
    }
    segment.samples.push_back(std::move(sample));
    segment.rewards.push_back(macro_reward(window));
    if (state.t >= c.episode_length) break;
  }
  segment.bootstrap = 0.25;
  std::vector<double> pinned;
  {
    Tape tape(false);
    LossReport report;
    coordinator_loss(tape, net, segment, config, report);
    pinned = report.advantages;
  }
  return grad_check(net.params(), [&](Tape& tape) {
    LossReport report;
    return coordinator_loss(tape, net, segment, config, report, pinned);
  }, eps);
}

GradCheckReport executor_gradcheck(const EnvConfig& env, std::uint64_t seed, double eps,
                                   Eigen::Index hidden) {
  Rng rng(seed);
  ExecutorNet net(rng, hidden);
  TrainConfig config;
  EnvConfig c = env;
  c.seed = seed;
  auto [state, obs] = reset(c);
  const int n = c.n_sensors;
  // Every sensor tracks all targets so that no sample is empty.
  GoalMap goals(n, c.n_targets);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < c.n_targets; ++j) goals.set(i, j, true);
  }
  ExecutorSegment segment;
  segment.samples.assign(n, {});
  segment.rewards.assign(n, {});
  segment.bootstrap.assign(n, 0.1);
  for (int t = 0; t < 5 && state.t < c.episode_length; ++t) {
    std::vector<Action> actions(n);
    for (int i = 0; i < n; ++i) {
      ExecutorSample sample;
      sample.rows = goal_filter(obs.row(i), goals.row(i));
      const ExecutorDecision d = executor_act(net, sample.rows, rng);
      actions[i] = d.action;
      sample.action_index = index_from_action(d.action);
      segment.samples[i].push_back(std::move(sample));
    }
    const WorldState prev = state;
    StepResult r = step(state, actions, c);
    for (int i = 0; i < n; ++i) {
      const auto assigned = goals.assigned(i);
      segment.rewards[i].push_back(executor_reward(prev, state, i, assigned, c));
    }
    obs = r.observation;
  }
  std::vector<double> pinned;
  {
    Tape tape(false);
    LossReport report;
    executor_loss(tape, net, segment, config, report);
    pinned = report.advantages;
  }
  return grad_check(net.params(), [&](Tape& tape) {
    LossReport report;
    return executor_loss(tape, net, segment, config, report, pinned);
  }, eps);
}

}  // namespace hitmac

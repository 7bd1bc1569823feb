#include "hitmac/cli.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>
#include <sstream>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "hitmac/baselines.hpp"
#include "hitmac/policy.hpp"

namespace hitmac::cli {

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path);
  return out;
}

nlohmann::ordered_json as_ordered(const nlohmann::json& j) { return nlohmann::ordered_json::parse(j.dump()); }

nlohmann::json read_input_checkpoint(const std::string& path) {
  try {
    return read_checkpoint(path);
  } catch (const std::exception& e) {
    throw UsageError("cannot read checkpoint " + path + ": " + e.what());
  }
}

template <class Net>
void load_into(const nlohmann::json& doc, Net& net, const std::string& kind, const std::string& path) {
  try {
    load_checkpoint(doc, net.params(), kind);
  } catch (const std::invalid_argument& e) {
    throw UsageError(path + " is not a usable " + kind + " checkpoint: " + e.what());
  }
}

InputRef checkpoint_input(const std::string& path) {
  InputRef ref;
  ref.path = path;
  ref.content_hash = file_hash(path);
  ref.manifest = read_checkpoint(path).value("manifest", std::string{});
  return ref;
}

}  // namespace

Configs load_configs(const std::optional<std::string>& path) {
  Configs c;
  if (!path) return c;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(*path));
    from_json(doc, c.env);
    if (doc.contains("train")) from_json(doc.at("train"), c.train);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("malformed config " + *path + ": " + e.what());
  }
  return c;
}

std::string content_hash(const std::string& bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

std::string file_hash(const std::string& path) { return content_hash(read_file(path)); }

nlohmann::ordered_json RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["env"] = env;
  j["train"] = train;
  j["seeds"] = seeds;
  nlohmann::ordered_json in = nlohmann::ordered_json::array();
  for (const auto& r : inputs) {
    in.push_back({{"path", r.path}, {"content_hash", r.content_hash}, {"manifest", r.manifest}});
  }
  j["inputs"] = in;
  return j;
}

std::string RunManifest::hash() const { return content_hash(to_json().dump()); }

void RunManifest::write(const std::string& path) const {
  nlohmann::ordered_json j = to_json();
  j["hash"] = hash();
  j["started_at"] = started_at;
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

std::vector<EnvConfig> parse_sweep(const std::string& spec, const EnvConfig& base) {
  if (spec.empty()) return {base};
  static const std::regex pattern(R"(^(targets|sensors)=(\d+)\.\.(\d+)$)");
  std::smatch match;
  if (!std::regex_match(spec, match, pattern)) {
    throw UsageError("malformed sweep '" + spec + "' (expected targets=A..B or sensors=A..B)");
  }
  const int lo = std::stoi(match[2].str());
  const int hi = std::stoi(match[3].str());
  if (lo < 1 || hi < lo) throw UsageError("sweep range must satisfy 1 <= A <= B");
  std::vector<EnvConfig> out;
  for (int v = lo; v <= hi; ++v) {
    EnvConfig c = base;
    (match[1].str() == "targets" ? c.n_targets : c.n_sensors) = v;
    out.push_back(c);
  }
  return out;
}

void write_summary_header(std::ostream& out) {
  out << "policy,n_sensors,n_targets,episodes,cr_mean,cr_std,ag_mean,ag_std,ag_inf_episodes\n";
}

void write_summary_row(std::ostream& out, const EvalSummary& s) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%s,%d,%d,%d,%.6f,%.6f,%.6f,%.6f,%d\n", s.policy.c_str(),
                s.n_sensors, s.n_targets, s.episodes, s.cr_mean, s.cr_std, s.ag_mean, s.ag_std,
                s.ag_infinite);
  out << buf;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const SimulateOptions& opts, std::ostream& out, std::ostream& err) {
  (void)err;
  if (opts.episodes < 1) throw UsageError("--episodes must be >= 1");
  Configs cfg = load_configs(opts.config);
  if (opts.seed) cfg.env.seed = *opts.seed;
  try {
    cfg.env.validate();
  } catch (const ConfigError& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }

  std::unique_ptr<Controller> controller;
  if (opts.policy == "random") {
    controller = std::make_unique<RandomController>(cfg.env);
  } else if (opts.policy == "scripted") {
    controller = std::make_unique<ScriptedController>(cfg.env);
  } else if (opts.policy == "ilp") {
    controller = std::make_unique<IlpController>(cfg.env);
  } else {
    throw UsageError("unknown policy '" + opts.policy + "' (expected random, scripted or ilp)");
  }

  RunManifest manifest;
  manifest.command = opts.command_line;
  manifest.env = as_ordered(nlohmann::json(cfg.env));
  manifest.train = nlohmann::ordered_json::object();
  manifest.seeds = {cfg.env.seed};
  manifest.started_at = utc_now();
  const std::string hash = manifest.hash();
  if (opts.out) {
    manifest.write(*opts.out + ".manifest.json");
  } else if (opts.trace) {
    manifest.write(*opts.trace + ".manifest.json");
  }

  std::vector<EpisodeTrace> traces;
  const EvalSummary s =
      evaluate(cfg.env, *controller, opts.episodes, cfg.env.seed, opts.trace ? &traces : nullptr);
  if (opts.trace) {
    auto tf = open_out(*opts.trace);
    for (std::size_t e = 0; e < traces.size(); ++e) {
      write_trace_jsonl(tf, traces[e], static_cast<int>(e), hash);
    }
  }
  auto emit = [&](std::ostream& o) {
    o << "# manifest=" << hash << '\n';
    write_summary_header(o);
    write_summary_row(o, s);
  };
  if (opts.out) {
    auto f = open_out(*opts.out);
    emit(f);
  }
  emit(out);
  return kExitOk;
}

int cmd_train(const TrainOptions& opts, std::ostream& out, std::ostream& err) {
  Stage stage;
  try {
    stage = parse_stage(opts.stage);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (opts.out.empty()) throw UsageError("--out is required");
  Configs cfg = load_configs(opts.config);
  cfg.train.stage = stage;
  if (opts.episodes) cfg.train.episodes = *opts.episodes;
  if (opts.workers) cfg.train.workers = *opts.workers;
  if (opts.seed) cfg.train.seed = *opts.seed;
  if (opts.executor) cfg.train.executor_policy = *opts.executor;
  try {
    cfg.env.validate();
    cfg.train.validate();
  } catch (const ConfigError& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }

  RunManifest manifest;
  manifest.command = opts.command_line;
  manifest.env = as_ordered(nlohmann::json(cfg.env));
  manifest.train = as_ordered(nlohmann::json(cfg.train));
  manifest.seeds = {cfg.train.seed};
  manifest.started_at = utc_now();

  std::optional<ExecutorNet> frozen_executor;
  if (stage == Stage::Coordinator && cfg.train.executor_policy != "scripted") {
    const std::string& path = cfg.train.executor_policy;
    if (!std::filesystem::exists(path)) throw UsageError("executor checkpoint not found: " + path);
    const auto doc = read_input_checkpoint(path);
    Rng init(0);
    frozen_executor.emplace(init, doc.value("hidden", kHiddenUnits));
    load_into(doc, *frozen_executor, "executor", path);
    manifest.inputs.push_back(checkpoint_input(path));
  }

  const std::string hash = manifest.hash();
  manifest.write(opts.out + ".manifest.json");

  const int report_every = std::max(1, cfg.train.episodes / 20);
  ProgressCallback progress = [&](const EpisodeStats& s) {
    if ((s.episode + 1) % report_every == 0) {
      out << to_string(stage) << " episode " << s.episode + 1 << "/" << cfg.train.episodes
          << " mean_reward=" << s.mean_reward << " entropy=" << s.entropy << '\n';
    }
  };

  Rng init(mix_seed(cfg.train.seed, 0x1217ULL));
  TrainResult result;
  if (stage == Stage::Executor) {
    ExecutorNet net(init, cfg.train.hidden);
    result = train_executor(cfg.env, cfg.train, net, progress);
    save_checkpoint(opts.out, net.params(), "executor", net.hidden(), hash);
  } else {
    CoordinatorNet net(init, cfg.train.hidden);
    result = train_coordinator(cfg.env, cfg.train, net,
                               frozen_executor ? &*frozen_executor : nullptr, progress);
    save_checkpoint(opts.out, net.params(), "coordinator", net.hidden(), hash);
  }
  {
    auto f = open_out(opts.out + ".progress.csv");
    write_progress_csv(f, result, hash);
  }
  if (result.diverged) {
    err << "training diverged: " << result.diagnostics << " (last good checkpoint saved to "
        << opts.out << ")\n";
    return kExitDivergence;
  }
  out << "checkpoint " << opts.out << " manifest=" << hash << '\n';
  return kExitOk;
}

int cmd_eval(const EvalOptions& opts, std::ostream& out, std::ostream& err) {
  (void)err;
  if (opts.episodes < 1) throw UsageError("--episodes must be >= 1");
  Configs cfg = load_configs(opts.config);
  if (opts.seed) cfg.env.seed = *opts.seed;
  const std::vector<EnvConfig> settings = parse_sweep(opts.sweep, cfg.env);
  for (const auto& s : settings) {
    try {
      s.validate();
    } catch (const ConfigError& e) {
      throw UsageError(std::string("invalid config: ") + e.what());
    }
  }

  RunManifest manifest;
  manifest.command = opts.command_line;
  manifest.env = as_ordered(nlohmann::json(cfg.env));
  manifest.train = nlohmann::ordered_json::object();
  manifest.seeds = {cfg.env.seed};
  manifest.started_at = utc_now();

  std::optional<CoordinatorNet> coordinator;
  if (opts.coordinator != "random") {
    if (!std::filesystem::exists(opts.coordinator)) {
      throw UsageError("coordinator checkpoint not found: " + opts.coordinator);
    }
    const auto doc = read_input_checkpoint(opts.coordinator);
    Rng init(0);
    coordinator.emplace(init, doc.value("hidden", kHiddenUnits));
    load_into(doc, *coordinator, "coordinator", opts.coordinator);
    manifest.inputs.push_back(checkpoint_input(opts.coordinator));
  }
  std::optional<ExecutorNet> executor;
  if (opts.executor != "scripted") {
    if (!std::filesystem::exists(opts.executor)) {
      throw UsageError("executor checkpoint not found: " + opts.executor);
    }
    const auto doc = read_input_checkpoint(opts.executor);
    Rng init(0);
    executor.emplace(init, doc.value("hidden", kHiddenUnits));
    load_into(doc, *executor, "executor", opts.executor);
    manifest.inputs.push_back(checkpoint_input(opts.executor));
  }
  const std::string hash = manifest.hash();
  if (opts.out) manifest.write(*opts.out + ".manifest.json");

  std::vector<EvalSummary> rows;
  for (const auto& s : settings) {
    HierarchicalController hier(s, coordinator ? &*coordinator : nullptr,
                                executor ? &*executor : nullptr, true);
    rows.push_back(evaluate(s, hier, opts.episodes, cfg.env.seed));
  }
  for (const auto& s : settings) {
    IlpController ilp(s);
    rows.push_back(evaluate(s, ilp, opts.episodes, cfg.env.seed));
  }
  auto emit = [&](std::ostream& o) {
    o << "# manifest=" << hash << '\n';
    write_summary_header(o);
    for (const auto& r : rows) write_summary_row(o, r);
  };
  if (opts.out) {
    auto f = open_out(*opts.out);
    emit(f);
  }
  emit(out);
  return kExitOk;
}

int cmd_gradcheck(const GradcheckOptions& opts, std::ostream& out, std::ostream& err) {
  (void)err;
  Configs cfg = load_configs(opts.config);
  if (!opts.config) {
    cfg.env.n_sensors = 2;
    cfg.env.n_targets = 3;
  }
  const std::uint64_t seed = opts.seed.value_or(cfg.env.seed);
  if (!(opts.eps > 0.0 && opts.eps <= 1e-2)) throw UsageError("--eps must be in (0, 1e-2]");
  const GradCheckReport c = coordinator_gradcheck(cfg.env, seed, opts.eps, cfg.train.hidden);
  const GradCheckReport e = executor_gradcheck(cfg.env, seed, opts.eps, cfg.train.hidden);
  out << "loss,max_relative_error,worst_parameter,coordinates\n";
  out << "coordinator," << c.max_relative_error << ',' << c.worst_parameter << ','
      << c.coordinates_checked << '\n';
  out << "executor," << e.max_relative_error << ',' << e.worst_parameter << ','
      << e.coordinates_checked << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  std::string command_line;
  for (int i = 1; i < argc; ++i) {
    if (i > 1) command_line += ' ';
    command_line += argv[i];
  }

  CLI::App app{"Hierarchical target coverage for directional sensor networks"};
  app.require_subcommand(1);

  SimulateOptions sim;
  sim.command_line = command_line;
  auto* simulate = app.add_subcommand("simulate", "Run a non-learned policy and report CR/AG");
  simulate->add_option("--config", sim.config, "JSON config");
  simulate->add_option("--policy", sim.policy, "random | scripted | ilp");
  simulate->add_option("--episodes", sim.episodes, "Number of episodes");
  simulate->add_option("--seed", sim.seed, "Base seed");
  simulate->add_option("--trace", sim.trace, "JSON-lines trace output");
  simulate->add_option("--out", sim.out, "Summary CSV output");

  TrainOptions tr;
  tr.command_line = command_line;
  auto* train = app.add_subcommand("train", "Train executors or the coordinator");
  train->add_option("stage", tr.stage, "executor | coordinator")->required();
  train->add_option("--config", tr.config, "JSON config");
  train->add_option("--out", tr.out, "Checkpoint output path")->required();
  train->add_option("--episodes", tr.episodes, "Episode budget");
  train->add_option("--workers", tr.workers, "Rollout workers");
  train->add_option("--seed", tr.seed, "Training seed");
  train->add_option("--executor", tr.executor, "scripted | executor checkpoint (coordinator stage)");

  EvalOptions ev;
  ev.command_line = command_line;
  auto* eval = app.add_subcommand("eval", "Evaluate the hierarchy and the ILP reference over a sweep");
  eval->add_option("--config", ev.config, "JSON config");
  eval->add_option("--coordinator", ev.coordinator, "coordinator checkpoint | random");
  eval->add_option("--executor", ev.executor, "executor checkpoint | scripted");
  eval->add_option("--sweep", ev.sweep, "targets=A..B | sensors=A..B");
  eval->add_option("--episodes", ev.episodes, "Episodes per setting");
  eval->add_option("--seed", ev.seed, "Base seed");
  eval->add_option("--out", ev.out, "Report CSV output");

  GradcheckOptions gc;
  gc.command_line = command_line;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of both training losses");
  gradcheck->add_option("--config", gc.config, "JSON config");
  gradcheck->add_option("--eps", gc.eps, "Central-difference step");
  gradcheck->add_option("--seed", gc.seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*simulate) return cmd_simulate(sim, out, err);
    if (*train) return cmd_train(tr, out, err);
    if (*eval) return cmd_eval(ev, out, err);
    if (*gradcheck) return cmd_gradcheck(gc, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DivergenceError& e) {
    err << "numeric divergence: " << e.what() << '\n';
    return kExitDivergence;
  }
  return kExitUsage;
}

}  // namespace hitmac::cli

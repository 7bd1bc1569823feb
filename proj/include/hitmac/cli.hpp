#pragma once

// Command implementations behind the `hitmac` executable. Each command
// returns a process exit code; usage problems throw UsageError.

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hitmac/env.hpp"
#include "hitmac/rollout.hpp"
#include "hitmac/training.hpp"

namespace hitmac::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDivergence = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Configs {
  EnvConfig env;
  TrainConfig train;
};

// Environment fields at the top level, training fields under "train".
Configs load_configs(const std::optional<std::string>& path);

// "git blob" SHA-1 of a byte string.
std::string content_hash(const std::string& bytes);
std::string file_hash(const std::string& path);

struct InputRef {
  std::string path;
  std::string content_hash;
  std::string manifest;  // manifest hash embedded in the input, if any
};

struct RunManifest {
  std::string command;
  nlohmann::ordered_json env;
  nlohmann::ordered_json train;
  std::vector<std::uint64_t> seeds;
  std::vector<InputRef> inputs;
  std::string started_at;

  // Hash over everything except timestamps.
  std::string hash() const;
  nlohmann::ordered_json to_json() const;
  void write(const std::string& path) const;
};

// Parses "targets=3..7", "sensors=2..6" or "" into per-setting configs.
std::vector<EnvConfig> parse_sweep(const std::string& spec, const EnvConfig& base);

void write_summary_header(std::ostream& out);
void write_summary_row(std::ostream& out, const EvalSummary& s);

struct SimulateOptions {
  std::optional<std::string> config;
  std::string policy = "scripted";
  int episodes = 20;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> trace;
  std::optional<std::string> out;
  std::string command_line;
};

struct TrainOptions {
  std::string stage;
  std::optional<std::string> config;
  std::string out;
  std::optional<int> episodes;
  std::optional<int> workers;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> executor;
  std::string command_line;
};

struct EvalOptions {
  std::optional<std::string> config;
  std::string coordinator = "random";  // checkpoint path or "random"
  std::string executor = "scripted";   // checkpoint path or "scripted"
  std::string sweep;
  int episodes = 20;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::string command_line;
};

struct GradcheckOptions {
  std::optional<std::string> config;
  double eps = 1e-4;
  std::optional<std::uint64_t> seed;
  std::string command_line;
};

int cmd_simulate(const SimulateOptions& opts, std::ostream& out, std::ostream& err);
int cmd_train(const TrainOptions& opts, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalOptions& opts, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const GradcheckOptions& opts, std::ostream& out, std::ostream& err);

// Full argument parsing and dispatch; returns the exit code.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace hitmac::cli

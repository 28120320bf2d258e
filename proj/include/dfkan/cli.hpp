#pragma once

#include "dfkan/analysis.hpp"
#include "dfkan/config.hpp"
#include "dfkan/gradcheck.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dfkan {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitConfig = 2, kExitNumeric = 3 };

// Output directory: explicit flag, else $DFKAN_OUT, else "dfkan_out".
std::string output_dir(const std::string& flag);

struct RunResult {
  RunConfig config;  // resolved
  std::string id;
  std::uint64_t hash = 0;
  Dataset data;
  Split split;
  Model model;
  TrainHistory history;
  Metrics test;
  std::optional<PruneReport> prune;
  double train_seconds = 0.0;
};

// Loads data, resolves the config, builds, trains and evaluates.
RunResult run_training(RunConfig config);

Json manifest_json(const RunResult& r);
Json provenance_json(const Provenance& p);
// Writes <id>.ckpt, <id>.manifest.json and <id>.history.csv.
std::vector<std::string> write_run(const RunResult& r, const std::string& dir, bool with_checkpoint = true);

struct TrainArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};
int cmd_train(const TrainArgs& args);

struct BenchmarkArgs {
  std::string suite;
  std::string out;
  std::optional<std::uint64_t> seed;
  int threads = 1;
};
int cmd_benchmark(const BenchmarkArgs& args);

struct GradcheckArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int batch = 8;
  double tolerance = 1e-5;
  std::string corrupt_op;  // test fixture: op whose backward rule is scaled
  int corrupt_input = -1;
};
int cmd_gradcheck(const GradcheckArgs& args);

struct AnalyzeArgs {
  std::string checkpoint;
  std::string config;  // defaults to the config stored in the run manifest
  std::string instrument;  // decompose | prune | extract | attention | gradfield
  std::string out;
  int layer = 0;
  int points = 201;
  int max_degree = -1;  // -1: full composed degree
  double retain = 0.90;
};
int cmd_analyze(const AnalyzeArgs& args);

struct GenDataArgs {
  std::string generator;
  long long n = 5000;
  double noise = 0.0;
  bool relative = false;
  std::uint64_t seed = 0;
  std::string out;  // CSV path; provenance goes next to it
};
int cmd_gen_data(const GenDataArgs& args);

// Maps library exceptions onto the exit-code contract and prints the message.
int run_guarded(const std::function<int()>& body);

}  // namespace dfkan

#include "dfkan/cli.hpp"

#include <iostream>

#include "CLI11.hpp"

int main(int argc, char** argv) {
  using namespace dfkan;
  CLI::App app{"DualFlexKAN training, benchmarking and analysis"};
  app.require_subcommand(1);
  int threads = 1;
  std::optional<std::uint64_t> seed;
  app.add_option("--threads", threads, "Cap on worker threads (default 1)")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "Override the config seed");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train one model from a config file");
  t->add_option("config", train.config, "Run config (JSON)")->required();
  t->add_option("--out", train.out, "Output directory (default: $DFKAN_OUT or dfkan_out)");
  t->add_option("--seed", seed, "Override the config seed");

  BenchmarkArgs bench;
  auto* b = app.add_subcommand("benchmark", "Run a (dataset x preset x seed) suite");
  b->add_option("suite", bench.suite, "Suite file (JSON)")->required();
  b->add_option("--out", bench.out, "Output directory");
  b->add_option("--seed", seed, "Override the suite base seed");
  b->add_option("--threads", threads, "Parallel cells")->check(CLI::PositiveNumber);

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  g->add_option("config", gc.config, "Run config (JSON)")->required();
  g->add_option("--out", gc.out, "Output directory");
  g->add_option("--seed", seed, "Override the config seed");
  g->add_option("--batch", gc.batch, "Rows in the random batch");
  g->add_option("--tolerance", gc.tolerance, "Relative error bound");
  g->add_option("--corrupt-op", gc.corrupt_op, "Scale the backward rule of this op (negative control)")
      ->group("");
  g->add_option("--corrupt-input", gc.corrupt_input, "Input index of the corrupted rule")->group("");

  AnalyzeArgs an;
  auto* a = app.add_subcommand("analyze", "Run an analysis instrument on a checkpoint");
  a->add_option("checkpoint", an.checkpoint, "Checkpoint file")->required();
  a->add_option("instrument", an.instrument, "decompose | prune | extract | attention | gradfield")->required();
  a->add_option("--config", an.config, "Run config (default: the one in the run manifest)");
  a->add_option("--out", an.out, "Output directory");
  a->add_option("--layer", an.layer, "Hidden layer for decompose");
  a->add_option("--points", an.points, "Probe grid points per axis");
  a->add_option("--max-degree", an.max_degree, "Truncation degree for extract");
  a->add_option("--retain", an.retain, "R2 fraction kept by prune");

  GenDataArgs gd;
  auto* d = app.add_subcommand("gen-data", "Export a synthetic dataset");
  d->add_option("generator", gd.generator, "Generator name")->required();
  d->add_option("--n", gd.n, "Samples");
  d->add_option("--noise", gd.noise, "Noise standard deviation");
  d->add_flag("--relative", gd.relative, "Noise is a multiple of std(y)");
  d->add_option("--seed", seed, "Seed");
  d->add_option("--out", gd.out, "CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  return run_guarded([&]() -> int {
    if (*t) {
      train.seed = seed;
      return cmd_train(train);
    }
    if (*b) {
      bench.seed = seed;
      bench.threads = threads;
      return cmd_benchmark(bench);
    }
    if (*g) {
      gc.seed = seed;
      return cmd_gradcheck(gc);
    }
    if (*a) return cmd_analyze(an);
    gd.seed = seed.value_or(0);
    return cmd_gen_data(gd);
  });
}

#include "dfkan/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

namespace dfkan {

namespace fs = std::filesystem;

std::string output_dir(const std::string& flag) {
  std::string dir = flag;
  if (dir.empty()) {
    const char* env = std::getenv("DFKAN_OUT");
    dir = env != nullptr && *env != '\0' ? env : "dfkan_out";
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir + "': " + ec.message());
  return dir;
}

namespace {

std::string join(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double json_number(double v) { return std::isfinite(v) ? v : 0.0; }

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

}  // namespace

Json provenance_json(const Provenance& p) {
  Json notes = Json::object();
  for (const auto& [k, v] : p.notes) notes[k] = v;
  return Json{{"generator", p.generator}, {"seed", p.seed}, {"noise", p.noise}, {"n", p.n}, {"notes", notes}};
}

RunResult run_training(RunConfig config) {
  RunResult r;
  r.data = load_dataset(config.data, config.seed);
  resolve(config, r.data.features());
  r.config = config;
  r.hash = config_hash(config);
  r.id = run_id(config);
  r.model = build(config.model);
  r.split = make_split(r.data.size(), config.seed, config.data.train_frac, config.data.val_frac, config.data.test_frac);
  if (r.split.test.empty()) throw ConfigError("config.data: the test split is empty");
  const auto t0 = std::chrono::steady_clock::now();
  r.history = train(r.model, r.data, r.split, config.train);
  r.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const Tensor Xt = take_rows(r.data.X, r.split.test);
  const Tensor yt = take_rows(r.data.y, r.split.test);
  r.test = evaluate(r.model, Xt, yt);
  if (std::isfinite(r.test.r2)) r.prune = effective_params(r.model, Xt, yt);
  return r;
}

Json manifest_json(const RunResult& r) {
  Json metrics{{"test_mse", number_or_null(r.test.mse)},
               {"test_r2", number_or_null(r.test.r2)},
               {"total_params", total_params(r.config.model)},
               {"effective_params", r.prune && r.prune->applicable ? Json(r.prune->effective_params) : Json(nullptr)},
               {"train_seconds", json_number(r.train_seconds)}};
  const auto pc = param_count(r.config.model);
  Json breakdown{{"linear", pc.linear}, {"bias", pc.bias},           {"input_fn", pc.input_fn},
                 {"output_fn", pc.output_fn}, {"reg", pc.reg},      {"attention", r.config.model.attention ? r.config.model.n_inputs() : 0}};
  return Json{{"run_id", r.id},
              {"config_hash", hex64(r.hash)},
              {"config", to_json(r.config)},
              {"dataset", provenance_json(r.data.provenance)},
              {"metrics", metrics},
              {"params", breakdown},
              {"epochs_run", r.history.epochs.size()},
              {"best_epoch", r.history.best_epoch},
              {"tool_version", kToolVersion}};
}

std::vector<std::string> write_run(const RunResult& r, const std::string& dir, bool with_checkpoint) {
  std::vector<std::string> files;
  if (with_checkpoint) {
    const auto ckpt = join(dir, r.id + ".ckpt");
    Model copy = r.model;
    save_checkpoint(ckpt, copy, r.hash);
    files.push_back(ckpt);
  }
  const auto manifest = join(dir, r.id + ".manifest.json");
  write_text(manifest, manifest_json(r).dump(2) + "\n");
  files.push_back(manifest);
  std::ostringstream h;
  h << "epoch,train_mse,val_mse\n";
  for (const auto& e : r.history.epochs) {
    h << e.epoch << ',' << format_double(e.train_mse) << ',' << format_double(e.val_mse) << '\n';
  }
  const auto history = join(dir, r.id + ".history.csv");
  write_text(history, h.str());
  files.push_back(history);
  return files;
}

// ---- train ----------------------------------------------------------------

int cmd_train(const TrainArgs& args) {
  RunConfig cfg = load_run_config(args.config);
  if (args.seed) cfg.seed = *args.seed;
  const std::string dir = output_dir(args.out);
  const RunResult r = run_training(cfg);
  for (const auto& f : write_run(r, dir)) std::cout << "wrote " << f << "\n";
  std::cout << "test_mse " << format_double(r.test.mse) << "  test_r2 " << format_double(r.test.r2) << "  params "
            << total_params(r.config.model) << "\n";
  return kExitOk;
}

// ---- benchmark ------------------------------------------------------------

namespace {

struct Cell {
  std::string dataset;
  std::string preset;
  Json data;
  Json model;  // preset object or {"layers": [...], "attention": ...}
};

std::string dataset_label(const Json& d) {
  if (d.contains("label")) return d.at("label").get<std::string>();
  if (d.contains("generator")) return d.at("generator").get<std::string>();
  if (d.contains("path")) return fs::path(d.at("path").get<std::string>()).stem().string();
  throw ConfigError("suite.datasets: entry without generator or path");
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return v.empty() ? std::nan("") : 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

int cmd_benchmark(const BenchmarkArgs& args) {
  const std::string text = read_text(args.suite);
  Json suite;
  try {
    suite = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError("suite: " + std::string(e.what()));
  }
  if (!suite.is_object()) throw ConfigError("suite: expected an object");
  for (const auto& [k, _] : suite.items()) {
    if (k != "name" && k != "seed" && k != "repeats" && k != "datasets" && k != "presets" && k != "train") {
      throw ConfigError("suite." + k + ": unknown field");
    }
  }
  const std::string name = suite.value("name", std::string("suite"));
  std::uint64_t seed = suite.value("seed", std::uint64_t{0});
  if (args.seed) seed = *args.seed;
  const int repeats = suite.value("repeats", 1);
  if (repeats < 1) throw ConfigError("suite.repeats: must be >= 1");
  if (!suite.contains("datasets") || !suite.at("datasets").is_array() || suite.at("datasets").empty()) {
    throw ConfigError("suite.datasets: required non-empty array");
  }
  if (!suite.contains("presets") || !suite.at("presets").is_array() || suite.at("presets").empty()) {
    throw ConfigError("suite.presets: required non-empty array");
  }
  const Json train = suite.value("train", Json::object());

  std::vector<Cell> cells;
  for (const auto& d : suite.at("datasets")) {
    Json data = d;
    const std::string dl = dataset_label(d);
    data.erase("label");
    for (const auto& p : suite.at("presets")) {
      Json model = p;
      if (!p.contains("label")) throw ConfigError("suite.presets: every preset needs a label");
      const std::string pl = p.at("label").get<std::string>();
      model.erase("label");
      cells.push_back({dl, pl, data, model});
    }
  }
  std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
    return std::tie(a.dataset, a.preset) < std::tie(b.dataset, b.preset);
  });

  // Validate every cell before spending time on training.
  struct Job {
    std::size_t cell;
    int repeat;
    RunConfig config;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (int r = 0; r < repeats; ++r) {
      Json j{{"name", name + "-" + cells[c].dataset + "-" + cells[c].preset},
             {"seed", seed + static_cast<std::uint64_t>(r)},
             {"data", cells[c].data},
             {"train", train}};
      if (cells[c].model.contains("layers")) {
        j["layers"] = cells[c].model.at("layers");
        if (cells[c].model.contains("attention")) j["attention"] = cells[c].model.at("attention");
      } else {
        j["preset"] = cells[c].model;
      }
      jobs.push_back({c, r, parse_run_config(j.dump())});
    }
  }

  const std::string dir = output_dir(args.out);
  struct Outcome {
    bool ok = false;
    std::string error;
    double mse = 0, r2 = 0, seconds = 0;
    long long params = 0;
    std::optional<long long> effective;
  };
  std::vector<Outcome> outcomes(jobs.size());
  std::mutex io;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < jobs.size(); k = next++) {
      Outcome o;
      try {
        const RunResult r = run_training(jobs[k].config);
        o.ok = true;
        o.mse = r.test.mse;
        o.r2 = r.test.r2;
        o.seconds = r.train_seconds;
        o.params = total_params(r.config.model);
        if (r.prune && r.prune->applicable) o.effective = r.prune->effective_params;
        std::lock_guard<std::mutex> lock(io);
        write_run(r, dir, false);
        std::cout << r.id << "  mse " << format_double(o.mse) << "\n";
      } catch (const std::exception& e) {
        o.error = e.what();
        std::lock_guard<std::mutex> lock(io);
        std::cerr << "cell " << cells[jobs[k].cell].dataset << "/" << cells[jobs[k].cell].preset << " seed "
                  << jobs[k].config.seed << " failed: " << e.what() << "\n";
      }
      outcomes[k] = std::move(o);
    }
  };
  const int threads = std::max(1, args.threads);
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::ostringstream table, timing, failures;
  table << "dataset,preset,runs,failures,mse_mean,mse_std,r2_mean,r2_std,params,effective_params_mean\n";
  timing << "dataset,preset,seconds_mean,seconds_std\n";
  failures << "dataset,preset,seed,error\n";
  int failed = 0;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    std::vector<double> mse, r2, secs, eff;
    long long params = 0;
    int fails = 0;
    for (std::size_t k = 0; k < jobs.size(); ++k) {
      if (jobs[k].cell != c) continue;
      const auto& o = outcomes[k];
      if (!o.ok) {
        ++fails;
        std::string err = o.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        failures << cells[c].dataset << ',' << cells[c].preset << ',' << jobs[k].config.seed << ',' << err << '\n';
        continue;
      }
      mse.push_back(o.mse);
      r2.push_back(o.r2);
      secs.push_back(o.seconds);
      params = o.params;
      if (o.effective) eff.push_back(static_cast<double>(*o.effective));
    }
    failed += fails;
    table << cells[c].dataset << ',' << cells[c].preset << ',' << repeats << ',' << fails << ','
          << format_double(mean_of(mse)) << ',' << format_double(std_of(mse)) << ',' << format_double(mean_of(r2))
          << ',' << format_double(std_of(r2)) << ',' << params << ',' << format_double(mean_of(eff)) << '\n';
    timing << cells[c].dataset << ',' << cells[c].preset << ',' << format_double(mean_of(secs)) << ','
           << format_double(std_of(secs)) << '\n';
  }
  write_text(join(dir, name + ".benchmark.csv"), table.str());
  write_text(join(dir, name + ".benchmark_timing.csv"), timing.str());
  if (failed > 0) write_text(join(dir, name + ".benchmark_failures.csv"), failures.str());
  std::cout << "wrote " << join(dir, name + ".benchmark.csv") << " (" << cells.size() << " cells, " << jobs.size()
            << " runs, " << failed << " failed)\n";
  return kExitOk;
}

// ---- gradcheck ------------------------------------------------------------

int cmd_gradcheck(const GradcheckArgs& args) {
  RunConfig cfg = load_run_config(args.config);
  if (args.seed) cfg.seed = *args.seed;
  if (args.batch < 2) throw ConfigError("--batch must be >= 2");
  const Dataset data = load_dataset(cfg.data, cfg.seed);
  resolve(cfg, data.features());
  Model model = build(cfg.model);
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x6C));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor X(args.batch, cfg.model.n_inputs());
  for (Eigen::Index k = 0; k < X.size(); ++k) X.data()[k] = u(rng);
  Tensor y(args.batch, 1);
  for (Eigen::Index k = 0; k < y.size(); ++k) y.data()[k] = n(rng);

  GradcheckOptions opt;
  opt.seed = cfg.seed;
  opt.tolerance = args.tolerance;
  if (!args.corrupt_op.empty()) {
    opt.fault_op = args.corrupt_op;
    opt.fault_input = args.corrupt_input;
  }
  const GradcheckReport rep = gradcheck(model, X, y, opt);

  const std::string dir = output_dir(args.out);
  std::ostringstream csv;
  csv << "group,scalars,worst_rel,worst_abs,pass\n";
  for (const auto& g : rep.groups) {
    csv << g.group << ',' << g.scalars << ',' << format_double(g.worst_rel) << ',' << format_double(g.worst_abs) << ','
        << (g.pass ? 1 : 0) << '\n';
    std::cout << (g.pass ? "ok    " : "FAIL  ") << g.group << "  worst rel " << format_double(g.worst_rel) << "\n";
  }
  write_text(join(dir, run_id(cfg) + ".gradcheck.csv"), csv.str());
  if (!rep.pass) {
    std::cout << "gradient check failed for:";
    for (const auto& g : rep.failing()) std::cout << ' ' << g;
    std::cout << "\n";
    return kExitCheckFailed;
  }
  std::cout << "gradient check passed (worst rel " << format_double(rep.worst_rel) << ")\n";
  return kExitOk;
}

// ---- analyze --------------------------------------------------------------

namespace {

RunConfig config_for_checkpoint(const AnalyzeArgs& args) {
  if (!args.config.empty()) return load_run_config(args.config);
  fs::path manifest = fs::path(args.checkpoint);
  manifest.replace_extension(".manifest.json");
  if (!fs::exists(manifest)) {
    throw ConfigError("no --config given and no manifest at '" + manifest.string() + "'");
  }
  Json m = Json::parse(read_text(manifest.string()));
  Json c = m.at("config");
  if (c.contains("preset")) c.erase("layers");
  return parse_run_config(c.dump());
}

std::string csv_row(std::initializer_list<double> v) {
  std::string out;
  bool first = true;
  for (double x : v) {
    if (!first) out += ',';
    out += format_double(x);
    first = false;
  }
  return out + "\n";
}

}  // namespace

int cmd_analyze(const AnalyzeArgs& args) {
  RunConfig cfg = config_for_checkpoint(args);
  const Dataset data = load_dataset(cfg.data, cfg.seed);
  resolve(cfg, data.features());
  Model model = build(cfg.model);
  load_checkpoint(args.checkpoint, model, config_hash(cfg));
  const std::string id = run_id(cfg);
  const std::string dir = output_dir(args.out);
  const std::string stem = join(dir, id + "." + args.instrument);
  std::ostringstream csv;
  Json summary{{"run_id", id}, {"instrument", args.instrument}};

  if (args.instrument == "decompose") {
    const auto [lo, hi] = input_range(model);
    const Decomposition d = decompose_activations(model, args.layer, probe_grid(lo, hi, args.points));
    csv << "x";
    for (const auto& c : d.curves) csv << ",neuron_" << c.neuron;
    csv << ",sum,output_bias,prediction\n";
    double identity = 0.0;
    for (std::size_t g = 0; g < d.grid.size(); ++g) {
      csv << format_double(d.grid[g]);
      for (const auto& c : d.curves) csv << ',' << format_double(c.values[g]);
      csv << ',' << format_double(d.sum[g]) << ',' << format_double(d.output_bias) << ','
          << format_double(d.prediction[g]) << '\n';
      identity = std::max(identity, std::abs(d.sum[g] + d.output_bias - d.prediction[g]));
    }
    Json ranking = Json::array();
    for (const auto& c : d.curves) ranking.push_back({{"neuron", c.neuron}, {"weight", c.weight}});
    summary["layer"] = args.layer;
    summary["ranking"] = ranking;
    summary["identity_max_error"] = identity;
  } else if (args.instrument == "prune") {
    const Split split = make_split(data.size(), cfg.seed, cfg.data.train_frac, cfg.data.val_frac, cfg.data.test_frac);
    const PruneReport rep =
        effective_params(model, take_rows(data.X, split.test), take_rows(data.y, split.test), args.retain);
    csv << "phase,kept_fraction,kept,r2\n";
    for (const auto& p : rep.sweep) {
      csv << "grid," << format_double(p.kept_fraction) << ',' << p.kept << ',' << format_double(p.metric) << '\n';
    }
    for (const auto& p : rep.refinement) {
      csv << "bisect," << format_double(p.kept_fraction) << ',' << p.kept << ',' << format_double(p.metric) << '\n';
    }
    summary["applicable"] = rep.applicable;
    summary["note"] = rep.note;
    summary["baseline_r2"] = number_or_null(rep.baseline);
    summary["retain"] = rep.retain;
    summary["total_params"] = rep.total;
    summary["effective_params"] = rep.applicable ? Json(rep.effective_params) : Json(nullptr);
  } else if (args.instrument == "extract") {
    const SymbolicFormula f = extract_symbolic(model, args.max_degree, args.points);
    summary["eligible"] = f.eligible;
    if (!f.eligible) {
      summary["reason"] = f.reason;
      write_text(stem + ".json", summary.dump(2) + "\n");
      std::cerr << "extract: model is not eligible: " << f.reason << "\n";
      return kExitConfig;
    }
    csv << "output,degree,coefficient\n";
    for (std::size_t o = 0; o < f.coefficients.size(); ++o) {
      for (std::size_t k = 0; k < f.coefficients[o].size(); ++k) {
        csv << o << ',' << k << ',' << format_double(f.coefficients[o][k]) << '\n';
      }
    }
    summary["coefficients"] = f.coefficients;
    summary["composed_degree"] = f.composed_degree;
    summary["residual"] = f.residual;
    summary["range"] = {f.lo, f.hi};
  } else if (args.instrument == "attention") {
    const auto rep = attention_report(model, data.names);
    csv << "rank,feature,name,alpha,logit\n";
    Json rows = Json::array();
    for (std::size_t r = 0; r < rep.size(); ++r) {
      csv << r + 1 << ',' << rep[r].feature << ',' << rep[r].name << ',' << format_double(rep[r].alpha) << ','
          << format_double(rep[r].logit) << '\n';
      rows.push_back({{"feature", rep[r].name}, {"alpha", rep[r].alpha}, {"logit", rep[r].logit}});
    }
    summary["ranking"] = rows;
  } else if (args.instrument == "gradfield") {
    if (model.config.n_inputs() != 2) {
      throw ConfigError("gradfield: model has " + std::to_string(model.config.n_inputs()) +
                        " inputs; the field needs exactly 2");
    }
    const auto [xlo, xhi] = input_range(model, 0);
    const auto [ylo, yhi] = input_range(model, 1);
    const GradientField f = gradient_field(model, probe_grid(xlo, xhi, args.points), probe_grid(ylo, yhi, args.points));
    csv << "x,y,z,dzdx,dzdy,grad_norm\n";
    for (Eigen::Index i = 0; i < f.Z.rows(); ++i) {
      for (Eigen::Index j = 0; j < f.Z.cols(); ++j) {
        csv << csv_row({f.xs[static_cast<std::size_t>(j)], f.ys[static_cast<std::size_t>(i)], f.Z(i, j), f.dZdx(i, j),
                        f.dZdy(i, j), f.magnitude(i, j)});
      }
    }
    summary["grid"] = {{"x", {xlo, xhi}}, {"y", {ylo, yhi}}, {"points", args.points}};
  } else {
    throw ConfigError("unknown instrument '" + args.instrument +
                      "' (decompose | prune | extract | attention | gradfield)");
  }
  write_text(stem + ".csv", csv.str());
  write_text(stem + ".json", summary.dump(2) + "\n");
  std::cout << "wrote " << stem << ".csv\n";
  return kExitOk;
}

// ---- gen-data -------------------------------------------------------------

int cmd_gen_data(const GenDataArgs& args) {
  if (args.out.empty()) throw ConfigError("--out is required");
  const Dataset d = generate(args.generator, args.n, args.noise, args.seed, args.relative);
  const fs::path out(args.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_delimited(args.out, d);
  fs::path prov = out;
  prov.replace_extension(".provenance.json");
  write_provenance(prov.string(), d);
  std::cout << "wrote " << args.out << " and " << prov.string() << "\n";
  return kExitOk;
}

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DimensionError& e) {
    std::cerr << "dimension error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
}

}  // namespace dfkan

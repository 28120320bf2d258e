// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
// Usage: acceptance [criterion ...]   (default: all ten)
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "dfkan/analysis.hpp"
#include "dfkan/cli.hpp"
#include "dfkan/gradcheck.hpp"

#ifndef DFKAN_BIN
#error "DFKAN_BIN must name the CLI binary"
#endif
#ifndef DFKAN_CONFIG_DIR
#error "DFKAN_CONFIG_DIR must name the configs directory"
#endif

namespace dfkan {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string config_path(const std::string& name) { return (fs::path(DFKAN_CONFIG_DIR) / name).string(); }

RunResult run_config(const std::string& name, std::uint64_t seed) {
  RunConfig cfg = load_run_config(config_path(name));
  cfg.seed = seed;
  return run_training(cfg);
}

Tensor uniform(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(rows, cols);
  for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = u(rng);
  return t;
}

// ---- 1 ----------------------------------------------------------------------

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  const std::vector<BasisSpec> families{BasisSpec::legendre(4), BasisSpec::bspline(3, 4), BasisSpec::gaussian_rbf(3),
                                        BasisSpec::sine(3), BasisSpec::rational(3, 2)};
  std::mt19937_64 rng(101);
  double worst = 0.0;
  int models = 0, failed = 0;
  std::string first_failure;
  for (const auto& b : families) {
    const std::vector<Strategy> ins{Strategy::none(), Strategy::fixed_fn(FixedFn::Tanh), Strategy::global(b),
                                    Strategy::per_dimension(b), Strategy::per_connection(b)};
    const std::vector<Strategy> outs{Strategy::none(), Strategy::fixed_fn(FixedFn::Sigmoid), Strategy::global(b),
                                     Strategy::per_dimension(b)};
    for (const auto& in : ins) {
      for (const auto& out : outs) {
        ModelConfig mc;
        mc.seed = static_cast<std::uint64_t>(models);
        for (const auto [ni, no] : {std::pair{3, 4}, std::pair{4, 2}}) {
          LayerConfig lc;
          lc.n_in = ni;
          lc.n_out = no;
          lc.input = in;
          lc.output = out;
          mc.layers.push_back(lc);
        }
        Model m = build(mc);
        GradcheckOptions opt;
        opt.h = 1e-5;
        opt.tolerance = 1e-5;
        const GradcheckReport r = gradcheck(m, uniform(8, 3, rng), Tensor(), opt);
        ++models;
        worst = std::max(worst, r.worst_rel);
        if (!r.pass) {
          ++failed;
          if (first_failure.empty()) first_failure = to_string(b.family) + " " + in.tag() + "/" + out.tag();
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = failed == 0 && secs < 60.0;
  o.detail = std::to_string(models) + " models, worst rel " + fmt(worst) + ", " + fmt(secs) + " s";
  if (failed > 0) o.detail += ", " + std::to_string(failed) + " failing (first: " + first_failure + ")";
  return o;
}

// ---- 2 ----------------------------------------------------------------------

BasisSpec random_basis(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> fam(0, 8), m(1, 7), k(1, 4), g(2, 8);
  switch (fam(rng)) {
    case 0: return BasisSpec::standard_poly(m(rng));
    case 1: return BasisSpec::legendre(m(rng));
    case 2: return BasisSpec::chebyshev(m(rng));
    case 3: return BasisSpec::gegenbauer(m(rng), 1.5);
    case 4: return BasisSpec::jacobi(m(rng), 0.5, 2.0);
    case 5: return BasisSpec::bspline(k(rng), g(rng));
    case 6: return BasisSpec::gaussian_rbf(m(rng));
    case 7: return BasisSpec::sine(m(rng));
    default: return BasisSpec::rational(m(rng) - 1, k(rng) - 1);
  }
}

Strategy random_strategy(std::mt19937_64& rng, bool input_side) {
  switch (std::uniform_int_distribution<int>(0, input_side ? 4 : 3)(rng)) {
    case 0: return Strategy::none();
    case 1: return Strategy::fixed_fn(static_cast<FixedFn>(std::uniform_int_distribution<int>(0, 3)(rng)));
    case 2: return Strategy::global(random_basis(rng));
    case 3: return Strategy::per_dimension(random_basis(rng));
    default: return Strategy::per_connection(random_basis(rng));
  }
}

LayerConfig random_layer(std::mt19937_64& rng, int n_in, int n_out) {
  std::uniform_int_distribution<int> place(0, 3), coin(0, 1);
  LayerConfig c;
  c.n_in = n_in;
  c.n_out = n_out;
  c.input = random_strategy(rng, true);
  c.output = random_strategy(rng, false);
  c.reg.placement = static_cast<RegPlacement>(place(rng));
  c.reg.use_batchnorm = coin(rng) == 1;
  c.reg.use_dropout = coin(rng) == 1;
  c.has_bias = coin(rng) == 1;
  return c;
}

Outcome parameter_count_oracle() {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<int> dim(1, 8), depth(1, 4), coin(0, 1);
  int mismatches = 0;
  for (int k = 0; k < 200; ++k) {
    const LayerConfig c = random_layer(rng, dim(rng), dim(rng));
    LayerParams p = init_params(c, static_cast<std::uint64_t>(k));
    long long walked = 0;
    for (const auto& ref : layer_parameters(p)) walked += ref.tensor->size();
    if (param_count(c).total != walked) ++mismatches;
  }
  for (int k = 0; k < 20; ++k) {
    ModelConfig mc;
    mc.seed = static_cast<std::uint64_t>(k);
    mc.attention = coin(rng) == 1;
    int width = dim(rng);
    const int layers = depth(rng);
    for (int l = 0; l < layers; ++l) {
      const int next = l + 1 == layers ? 1 : dim(rng);
      mc.layers.push_back(random_layer(rng, width, next));
      width = next;
    }
    Model m = build(mc);
    if (total_params(mc) != enumerate_scalars(m)) ++mismatches;
  }
  return {mismatches == 0, "200 layers + 20 models, " + std::to_string(mismatches) + " mismatches"};
}

// ---- 3 ----------------------------------------------------------------------

Outcome baseline_equivalence() {
  std::mt19937_64 rng(303);
  int differing = 0;
  const std::vector<std::pair<std::vector<int>, FixedFn>> nets{
      {{5, 8, 1}, FixedFn::Relu}, {{3, 6, 4, 2}, FixedFn::Tanh}, {{4, 7, 1}, FixedFn::Sigmoid}};
  for (const auto& [dims, act] : nets) {
    Model m = build(preset_mlp(dims, act, 7));
    for (auto& p : m.layers) p.b = uniform(1, p.b.cols(), rng);
    const Tensor X = uniform(50, dims.front(), rng, -2.0, 2.0);
    const Tensor Y = predict(m, X);
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      std::vector<double> h(X.row(r).data(), X.row(r).data() + X.cols());
      std::vector<double> h_row(h.size());
      for (Eigen::Index c = 0; c < X.cols(); ++c) h[static_cast<std::size_t>(c)] = X(r, c);
      for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const auto& p = m.layers[l];
        std::vector<double> z(static_cast<std::size_t>(p.W.rows()));
        for (Eigen::Index j = 0; j < p.W.rows(); ++j) {
          double s = 0.0;
          for (Eigen::Index i = 0; i < p.W.cols(); ++i) s += h[static_cast<std::size_t>(i)] * p.W(j, i);
          s += p.b(0, j);
          if (l + 1 < m.layers.size()) {
            switch (act) {
              case FixedFn::Relu: s = s > 0.0 ? s : 0.0; break;
              case FixedFn::Tanh: s = std::tanh(s); break;
              case FixedFn::Sigmoid: s = 1.0 / (1.0 + std::exp(-s)); break;
              default: break;
            }
          }
          z[static_cast<std::size_t>(j)] = s;
        }
        h = std::move(z);
      }
      for (Eigen::Index c = 0; c < Y.cols(); ++c) {
        if (Y(r, c) != h[static_cast<std::size_t>(c)]) ++differing;
      }
    }
  }
  return {differing == 0, "3 networks x 50 inputs, " + std::to_string(differing) + " differing outputs"};
}

// ---- 4 ----------------------------------------------------------------------

Outcome manifold_benchmark() {
  const auto t0 = Clock::now();
  std::vector<double> hybrid, kan;
  long long hp = 0, kp = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const RunResult h = run_config("manifold_hybrid.json", seed);
    const RunResult k = run_config("manifold_vanilla_kan.json", seed);
    hybrid.push_back(h.test.mse);
    kan.push_back(k.test.mse);
    hp = total_params(h.config.model);
    kp = total_params(k.config.model);
  }
  const double mh = median(hybrid), mk = median(kan);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = mh <= 1e-2 && mk >= 10.0 * mh && secs < 900.0;
  o.detail = "median test MSE hybrid " + fmt(mh) + " (" + std::to_string(hp) + " params) vs vanilla KAN " + fmt(mk) +
             " (" + std::to_string(kp) + " params), ratio " + fmt(mk / mh) + ", " + fmt(secs) + " s";
  return o;
}

// ---- 5 ----------------------------------------------------------------------

Outcome symbolic_recovery() {
  const auto t0 = Clock::now();
  std::vector<std::vector<double>> coeffs;
  for (std::uint64_t seed : {1, 2, 3}) {
    RunResult r = run_config("quadratic_recovery.json", seed);
    const SymbolicFormula f = extract_symbolic(r.model);
    if (!f.eligible) return {false, "extraction refused: " + f.reason};
    coeffs.push_back(f.coefficients.at(0));
  }
  const std::size_t d = coeffs.front().size();
  std::vector<double> med(d);
  for (std::size_t k = 0; k < d; ++k) {
    std::vector<double> v;
    for (const auto& c : coeffs) v.push_back(k < c.size() ? c[k] : 0.0);
    med[k] = median(v);
  }
  const double target[3] = {0.5, -1.0, 2.0};
  bool ok = d >= 3;
  for (std::size_t k = 0; k < std::min<std::size_t>(d, 3); ++k) ok = ok && std::abs(med[k] - target[k]) <= 0.3;
  for (std::size_t k = 3; k < d; ++k) ok = ok && std::abs(med[k]) < 0.1;
  const double secs = seconds_since(t0);
  std::string shown;
  for (std::size_t k = 0; k < d; ++k) shown += (k ? ", " : "") + fmt(med[k], 4);
  return {ok && secs < 300.0, "median coefficients (" + shown + "), " + fmt(secs) + " s"};
}

// ---- 6 ----------------------------------------------------------------------

Outcome parameter_efficiency() {
  const auto t0 = Clock::now();
  const RunResult k = run_config("friedman2_vanilla_kan.json", 1);
  const RunResult h = run_config("friedman2_hybrid.json", 1);
  const long long kp = total_params(k.config.model), hp = total_params(h.config.model);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = kp >= 10 * hp && h.test.r2 >= k.test.r2 - 0.02 && secs < 900.0;
  o.detail = "hybrid " + std::to_string(hp) + " params R2 " + fmt(h.test.r2, 5) + " vs vanilla KAN " +
             std::to_string(kp) + " params R2 " + fmt(k.test.r2, 5) + ", " + fmt(secs) + " s";
  return o;
}

// ---- 7 ----------------------------------------------------------------------

Outcome attention_attribution() {
  const std::set<std::string> informative{"x1", "x2", "x3", "x5"};
  std::vector<double> hits;
  std::string tops;
  for (std::uint64_t seed : {1, 2, 3}) {
    const RunResult r = run_config("friedman1_attention.json", seed);
    const auto rep = attention_report(r.model, r.data.names);
    int n = 0;
    std::string top;
    for (std::size_t k = 0; k < 5 && k < rep.size(); ++k) {
      n += static_cast<int>(informative.count(rep[k].name));
      top += (k ? " " : "") + rep[k].name;
    }
    hits.push_back(n);
    tops += (tops.empty() ? "" : "; ") + top;
  }
  const double m = median(hits);
  return {m >= 4.0, "median " + fmt(m) + " of {x1,x2,x3,x5} in top-5 (" + tops + ")"};
}

// ---- 8 ----------------------------------------------------------------------

Outcome regularization_invariants() {
  std::mt19937_64 rng(808);
  double worst_dropout = 0.0;
  for (double p : {0.1, 0.3, 0.5}) {
    Tape tape;
    const Var out = dropout(tape.leaf(Tensor::Ones(100000, 1)), p, Mode::Train, rng);
    worst_dropout = std::max(worst_dropout, std::abs(out.value().mean() - 1.0));
  }

  Tape tape;
  BatchNormState st = BatchNormState::make(8);
  Tensor X = uniform(256, 8, rng, -1.0, 1.0);
  for (Eigen::Index c = 0; c < 8; ++c) X.col(c) = (X.col(c).array() * (1.0 + 3.0 * c) + 5.0 * c).matrix();
  const Tensor Y = batchnorm(tape.leaf(X), tape.leaf(st.gamma), tape.leaf(st.beta), st, Mode::Train).value();
  const Eigen::RowVectorXd mean = Y.colwise().mean();
  const Eigen::RowVectorXd var = (Y.rowwise() - mean).array().square().colwise().mean();
  const double worst_mean = mean.cwiseAbs().maxCoeff();
  const double worst_var = (var.array() - 1.0).abs().maxCoeff();

  LayerConfig c;
  c.n_in = 3;
  c.n_out = 4;
  c.output = Strategy::fixed_fn(FixedFn::Tanh);
  c.reg.placement = RegPlacement::Both;
  c.reg.use_batchnorm = true;
  c.reg.use_dropout = true;
  LayerParams p = init_params(c, 4);
  bool separate = p.bn_pre && p.bn_post && p.bn_pre->running_mean.data() != p.bn_post->running_mean.data() &&
                  p.bn_pre->gamma.data() != p.bn_post->gamma.data();
  if (separate) {
    Tape t2;
    ForwardContext ctx(t2, Mode::Train);
    layer_forward(ctx, 0, c, p, t2.constant(uniform(32, 3, rng, 1.0, 3.0)));
    separate = !p.bn_pre->running_mean.isApprox(p.bn_post->running_mean);
  }

  Outcome o;
  o.pass = worst_dropout <= 0.01 && worst_mean <= 1e-9 && worst_var <= 1e-4 && separate;
  o.detail = "dropout |E-1| " + fmt(worst_dropout) + ", BN |mean| " + fmt(worst_mean) + ", |var-1| " +
             fmt(worst_var) + ", two BN states " + (separate ? "independent" : "aliased");
  return o;
}

// ---- 9 ----------------------------------------------------------------------

Outcome decomposition_identity() {
  RunResult r = run_config("gauss_sin_hybrid.json", 1);
  const auto [lo, hi] = input_range(r.model);
  const Decomposition d = decompose_activations(r.model, 0, probe_grid(lo, hi, 201));
  double worst = 0.0;
  for (std::size_t g = 0; g < d.grid.size(); ++g) {
    worst = std::max(worst, std::abs(d.sum[g] + d.output_bias - d.prediction[g]));
  }
  const auto epochs = r.history.epochs.size();
  Outcome o;
  o.pass = d.grid.size() == 201 && worst <= 1e-10 && r.test.mse <= 1e-3 && epochs <= 5000;
  o.detail = "identity error " + fmt(worst) + " over " + std::to_string(d.grid.size()) + " points, test MSE " +
             fmt(r.test.mse) + " after " + std::to_string(epochs) + " epochs";
  return o;
}

// ---- 10 ---------------------------------------------------------------------

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + DFKAN_BIN + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<fs::path> with_suffix(const fs::path& dir, const std::string& suffix) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string n = e.path().filename().string();
    if (n.size() > suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0) {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "dfkan_acceptance_determinism";
  fs::remove_all(root);
  int compared = 0, differing = 0;
  for (const char* sub : {"a", "b"}) {
    const fs::path out = root / sub;
    fs::create_directories(out);
    const std::string o = " --out \"" + out.string() + "\"";
    if (run_cli("train \"" + config_path("quadratic_recovery.json") + "\"" + o, root / "log") != 0 ||
        run_cli("train \"" + config_path("friedman1_attention.json") + "\" --seed 5" + o, root / "log") != 0 ||
        run_cli("benchmark \"" + config_path("suite_sym_quadratic.json") + "\"" + o, root / "log") != 0 ||
        run_cli("benchmark \"" + config_path("suite_sym_quadratic.json") + "\" --threads 3 --seed 7" + o,
                root / "log") != 0) {
      return {false, "CLI run failed: " + slurp(root / "log")};
    }
  }
  for (const std::string suffix : {".history.csv", ".benchmark.csv"}) {
    const auto a = with_suffix(root / "a", suffix);
    const auto b = with_suffix(root / "b", suffix);
    if (a.size() != b.size()) return {false, "different file sets for " + suffix};
    for (std::size_t k = 0; k < a.size(); ++k) {
      ++compared;
      if (a[k].filename() != b[k].filename() || slurp(a[k]) != slurp(b[k])) ++differing;
    }
  }
  return {compared > 0 && differing == 0,
          std::to_string(compared) + " metric tables compared byte for byte, " + std::to_string(differing) +
              " differing"};
}

}  // namespace
}  // namespace dfkan

int main(int argc, char** argv) {
  using namespace dfkan;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient fidelity", gradient_fidelity},
      {"parameter-count oracle", parameter_count_oracle},
      {"baseline equivalence", baseline_equivalence},
      {"manifold benchmark", manifold_benchmark},
      {"symbolic recovery", symbolic_recovery},
      {"parameter efficiency", parameter_efficiency},
      {"attention attribution", attention_attribution},
      {"regularization invariants", regularization_invariants},
      {"decomposition identity", decomposition_identity},
      {"determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!selected.empty() && selected.count(id) == 0) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << " (" << criteria[k].first << "): " << o.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}

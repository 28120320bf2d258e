#include "dfkan/datasets.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace dfkan {

namespace {

constexpr double kPi = std::numbers::pi;

struct Range {
  double lo;
  double hi;
};

using TargetFn = std::function<double(std::span<const double>)>;

std::uint64_t noise_seed(std::uint64_t seed) { return seed ^ 0xA5A5A5A55A5A5A5AULL; }

Dataset sample(const std::string& id, long long n, double noise, std::uint64_t seed, const std::vector<Range>& ranges,
               const TargetFn& target) {
  if (n < 1) throw ConfigError(id + ": N must be >= 1");
  if (noise < 0.0) throw ConfigError(id + ": noise must be >= 0");
  const int d = static_cast<int>(ranges.size());
  Dataset ds;
  ds.X.resize(n, d);
  ds.y.resize(n, 1);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (long long s = 0; s < n; ++s) {
    for (int c = 0; c < d; ++c) {
      const auto& r = ranges[static_cast<std::size_t>(c)];
      ds.X(s, c) = r.lo + (r.hi - r.lo) * unit(rng);
    }
    ds.y(s, 0) = target(std::span<const double>(ds.X.data() + s * d, static_cast<std::size_t>(d)));
  }
  if (noise > 0.0) {
    std::mt19937_64 nrng(noise_seed(seed));
    std::normal_distribution<double> normal(0.0, noise);
    for (long long s = 0; s < n; ++s) ds.y(s, 0) += normal(nrng);
  }
  for (int c = 0; c < d; ++c) ds.names.push_back("x" + std::to_string(c + 1));
  ds.provenance.generator = id;
  ds.provenance.seed = seed;
  ds.provenance.noise = noise;
  ds.provenance.n = n;
  std::ostringstream rs;
  for (int c = 0; c < d; ++c) {
    const auto& r = ranges[static_cast<std::size_t>(c)];
    rs << (c ? ";" : "") << ds.names[static_cast<std::size_t>(c)] << "~U(" << format_double(r.lo) << ","
       << format_double(r.hi) << ")";
  }
  ds.provenance.notes["ranges"] = rs.str();
  return ds;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void Dataset::validate() const {
  if (X.rows() < 1) throw ConfigError("dataset is empty");
  if (y.rows() != X.rows() || y.cols() != 1) throw DimensionError("dataset target must be N x 1");
  if (static_cast<int>(names.size()) != X.cols()) throw DimensionError("dataset names do not match columns");
  if (!X.allFinite() || !y.allFinite()) throw NumericError("dataset contains non-finite values");
}

double friedman1_target(std::span<const double> x) {
  return 10.0 * std::sin(kPi * x[0] * x[1]) + 20.0 * (x[2] - 0.5) * (x[2] - 0.5) + 10.0 * x[3] + 5.0 * x[4];
}

double friedman2_target(std::span<const double> x) {
  const double t = x[1] * x[2] - 1.0 / (x[1] * x[3]);
  return std::sqrt(x[0] * x[0] + t * t);
}

double feynman_I_18_12_target(std::span<const double> x) { return x[0] * x[1] * x[2] * std::sin(x[3]); }

double feynman_II_6_11_target(std::span<const double> x) { return x[0] * std::cos(x[1]) / (x[2] * x[2]); }

double damped_oscillator_target(std::span<const double> x) {
  const double t = x[0];
  return std::exp(-x[1] * t) * std::sin(x[2] * t);
}

double compositional_target(const std::string& kind, std::span<const double> x) {
  if (kind == "sin_exp") return std::sin(std::exp(x[0]));
  if (kind == "nested_trig") return std::sin(std::cos(std::sin(x[0])));
  if (kind == "gauss_sin") return std::exp(-x[0] * x[0]) + 0.5 * std::sin(3.0 * x[0]);
  if (kind == "sym_quadratic") return 2.0 * x[0] * x[0] - x[0] + 0.5;
  if (kind == "manifold_sincos") return std::sin(2.0 * x[0]) * std::cos(2.0 * x[1]);
  if (kind == "franke") {
    const double a = 9.0 * x[0];
    const double b = 9.0 * x[1];
    return 0.75 * std::exp(-((a - 2) * (a - 2) + (b - 2) * (b - 2)) / 4.0) +
           0.75 * std::exp(-(a + 1) * (a + 1) / 49.0 - (b + 1) / 10.0) +
           0.5 * std::exp(-((a - 7) * (a - 7) + (b - 3) * (b - 3)) / 4.0) -
           0.2 * std::exp(-(a - 4) * (a - 4) - (b - 7) * (b - 7));
  }
  throw ConfigError("unknown compositional kind '" + kind + "'");
}

Dataset gen_friedman1(long long n, double noise, std::uint64_t seed) {
  return sample("friedman1", n, noise, seed, std::vector<Range>(10, {0.0, 1.0}), friedman1_target);
}

Dataset gen_friedman2(long long n, double noise, std::uint64_t seed) {
  auto ds = sample("friedman2", n, noise, seed, {{0.0, 100.0}, {40.0 * kPi, 560.0 * kPi}, {0.0, 1.0}, {1.0, 11.0}},
                   friedman2_target);
  ds.provenance.notes["form"] = "canonical 4-variable form sqrt(x1^2 + (x2*x3 - 1/(x2*x4))^2)";
  return ds;
}

Dataset gen_feynman_I_18_12(long long n, double noise, std::uint64_t seed) {
  auto ds = sample("feynman_I_18_12", n, noise, seed, {{0.5, 2.0}, {0.5, 2.0}, {0.5, 2.0}, {0.5, 2.0}, {0.0, 1.0}},
                   feynman_I_18_12_target);
  ds.provenance.notes["form"] = "y = x1*x2*x3*sin(x4); x5 is a nuisance feature (5-feature reconstruction)";
  return ds;
}

Dataset gen_feynman_II_6_11(long long n, double noise, std::uint64_t seed) {
  auto ds = sample("feynman_II_6_11", n, noise, seed, {{0.5, 2.0}, {0.0, kPi}, {0.5, 2.0}}, feynman_II_6_11_target);
  ds.provenance.notes["form"] = "y = x1*cos(x2)/x3^2, physical constants dropped";
  return ds;
}

Dataset gen_damped_oscillator(long long n, double noise, std::uint64_t seed) {
  auto ds = sample("damped_oscillator", n, noise, seed, {{0.0, 4.0 * kPi}, {0.1, 1.0}, {1.0, 8.0}},
                   damped_oscillator_target);
  ds.names = {"t", "gamma", "omega"};
  ds.provenance.notes["form"] = "features (t, gamma, omega), phase fixed at 0";
  return ds;
}

Dataset gen_compositional(const std::string& kind, long long n, double noise, std::uint64_t seed) {
  std::vector<Range> ranges;
  if (kind == "sym_quadratic" || kind == "gauss_sin") {
    ranges = {{-2.0, 2.0}};
  } else if (kind == "sin_exp") {
    ranges = {{0.0, 2.0}};
  } else if (kind == "nested_trig") {
    ranges = {{-kPi, kPi}};
  } else if (kind == "manifold_sincos") {
    ranges = {{-kPi, kPi}, {-kPi, kPi}};
  } else if (kind == "franke") {
    ranges = {{0.0, 1.0}, {0.0, 1.0}};
  } else {
    throw ConfigError("unknown compositional kind '" + kind + "'");
  }
  return sample(kind, n, noise, seed, ranges, [kind](std::span<const double> x) {
    return compositional_target(kind, x);
  });
}

std::vector<std::string> generator_names() {
  return {"friedman1",     "friedman2",      "feynman_I_18_12", "feynman_II_6_11", "damped_oscillator",
          "sin_exp",       "nested_trig",    "gauss_sin",       "sym_quadratic",   "manifold_sincos",
          "franke"};
}

Dataset generate(const std::string& name, long long n, double noise, std::uint64_t seed, bool relative_noise) {
  auto make = [&](double sigma) -> Dataset {
    if (name == "friedman1") return gen_friedman1(n, sigma, seed);
    if (name == "friedman2") return gen_friedman2(n, sigma, seed);
    if (name == "feynman_I_18_12") return gen_feynman_I_18_12(n, sigma, seed);
    if (name == "feynman_II_6_11") return gen_feynman_II_6_11(n, sigma, seed);
    if (name == "damped_oscillator") return gen_damped_oscillator(n, sigma, seed);
    return gen_compositional(name, n, sigma, seed);
  };
  if (!relative_noise || noise == 0.0) return make(noise);
  const Dataset clean = make(0.0);
  const double mean = clean.y.mean();
  const double sd = std::sqrt((clean.y.array() - mean).square().mean());
  Dataset ds = make(noise * sd);
  ds.provenance.notes["noise_relative"] = format_double(noise) + " * std(y)";
  return ds;
}

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == delim) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  if (*begin == '+') ++begin;
  auto res = std::from_chars(begin, end, out);
  return res.ec == std::errc() && res.ptr == end;
}

}  // namespace

Dataset load_delimited(const std::string& path, const DelimitedOptions& options) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path + ": missing header row");
  const auto header = split_line(line, options.delimiter);
  const auto tgt_it = std::find(header.begin(), header.end(), options.target);
  if (tgt_it == header.end()) throw ConfigError(path + ": target column '" + options.target + "' not found");
  const auto target_col = static_cast<std::size_t>(tgt_it - header.begin());

  std::vector<std::vector<std::string>> rows;
  std::vector<long long> line_numbers;
  long long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = split_line(line, options.delimiter);
    if (cells.size() != header.size()) {
      throw ConfigError(path + ": row " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                        " cells, header has " + std::to_string(header.size()));
    }
    if (std::any_of(cells.begin(), cells.end(), [](const std::string& c) { return c.empty(); })) continue;
    rows.push_back(std::move(cells));
    line_numbers.push_back(lineno);
  }
  if (rows.empty()) throw ConfigError(path + ": no complete data rows");

  // A feature column is categorical when its first value is not numeric.
  std::vector<bool> categorical(header.size(), false);
  std::vector<std::vector<std::string>> categories(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    double tmp;
    if (c != target_col && !parse_number(rows.front()[c], tmp)) {
      categorical[c] = true;
      std::set<std::string> uniq;
      for (const auto& r : rows) uniq.insert(r[c]);
      categories[c].assign(uniq.begin(), uniq.end());
    }
  }

  Dataset ds;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == target_col) continue;
    if (categorical[c]) {
      for (const auto& cat : categories[c]) ds.names.push_back(header[c] + "=" + cat);
    } else {
      ds.names.push_back(header[c]);
    }
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  ds.X = Tensor::Zero(n, static_cast<Eigen::Index>(ds.names.size()));
  ds.y.resize(n, 1);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& cells = rows[static_cast<std::size_t>(r)];
    Eigen::Index col = 0;
    for (std::size_t c = 0; c < header.size(); ++c) {
      double v = 0.0;
      if (c == target_col) {
        if (!parse_number(cells[c], v)) {
          throw ConfigError(path + ": row " + std::to_string(line_numbers[static_cast<std::size_t>(r)]) +
                            ", column '" + header[c] + "': cannot parse '" + cells[c] + "'");
        }
        ds.y(r, 0) = v;
        continue;
      }
      if (categorical[c]) {
        const auto& cats = categories[c];
        const auto idx = std::lower_bound(cats.begin(), cats.end(), cells[c]) - cats.begin();
        ds.X(r, col + idx) = 1.0;
        col += static_cast<Eigen::Index>(cats.size());
        continue;
      }
      if (!parse_number(cells[c], v)) {
        throw ConfigError(path + ": row " + std::to_string(line_numbers[static_cast<std::size_t>(r)]) +
                          ", column '" + header[c] + "': cannot parse '" + cells[c] + "'");
      }
      ds.X(r, col++) = v;
    }
  }

  ds.provenance.generator = "delimited:" + path;
  ds.provenance.n = n;
  if (options.standardize) {
    std::ostringstream cols;
    for (Eigen::Index c = 0; c < ds.X.cols(); ++c) {
      const double mean = ds.X.col(c).mean();
      const double sd = std::sqrt((ds.X.col(c).array() - mean).square().mean());
      if (sd > 0.0) ds.X.col(c) = (ds.X.col(c).array() - mean) / sd;
      cols << (c ? ";" : "") << ds.names[static_cast<std::size_t>(c)] << ":" << format_double(mean) << ","
           << format_double(sd);
    }
    ds.provenance.notes["zscore"] = cols.str();
  } else {
    ds.provenance.notes["zscore"] = "none";
  }
  ds.validate();
  return ds;
}

void write_delimited(const std::string& path, const Dataset& data, char delimiter) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  for (const auto& name : data.names) out << name << delimiter;
  out << "y\n";
  for (Eigen::Index r = 0; r < data.X.rows(); ++r) {
    for (Eigen::Index c = 0; c < data.X.cols(); ++c) out << format_double(data.X(r, c)) << delimiter;
    out << format_double(data.y(r, 0)) << "\n";
  }
}

void write_provenance(const std::string& path, const Dataset& data) {
  nlohmann::json j;
  j["generator"] = data.provenance.generator;
  j["seed"] = data.provenance.seed;
  j["noise"] = data.provenance.noise;
  j["n"] = data.provenance.n;
  j["features"] = data.names;
  j["notes"] = data.provenance.notes;
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

}  // namespace dfkan

#include "dfkan/basis.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

namespace dfkan {

namespace {

const std::map<Family, std::string>& family_names() {
  static const std::map<Family, std::string> names = {
      {Family::StandardPoly, "standard_poly"}, {Family::Legendre, "legendre"},
      {Family::Chebyshev, "chebyshev"},        {Family::Gegenbauer, "gegenbauer"},
      {Family::Jacobi, "jacobi"},              {Family::BSpline, "bspline"},
      {Family::GaussianRBF, "gaussian_rbf"},   {Family::Sine, "sine"},
      {Family::Rational, "rational"},
  };
  return names;
}

BasisSpec with_defaults(Family f, int m) {
  BasisSpec s;
  s.family = f;
  s.order = m;
  s.domain = default_domain_map(f);
  return s;
}

// Slope of the degree-1 basis polynomial, used for the identity boost.
double linear_slope(const BasisSpec& spec) {
  switch (spec.family) {
    case Family::Gegenbauer: return 2.0 * spec.alpha;
    case Family::Jacobi: return (spec.alpha + spec.beta + 2.0) / 2.0;
    default: return 1.0;
  }
}

}  // namespace

std::string to_string(Family f) { return family_names().at(f); }

std::string to_string(DomainMap d) {
  switch (d) {
    case DomainMap::None: return "none";
    case DomainMap::Tanh: return "tanh";
    case DomainMap::Clamp: return "clamp";
  }
  return "none";
}

Family family_from_string(const std::string& s) {
  for (const auto& [f, name] : family_names()) {
    if (name == s) return f;
  }
  throw ConfigError("unknown basis family '" + s + "'");
}

DomainMap domain_map_from_string(const std::string& s) {
  if (s == "none") return DomainMap::None;
  if (s == "tanh") return DomainMap::Tanh;
  if (s == "clamp") return DomainMap::Clamp;
  throw ConfigError("unknown domain map '" + s + "'");
}

bool is_polynomial_family(Family f) {
  return f == Family::StandardPoly || f == Family::Legendre || f == Family::Chebyshev ||
         f == Family::Gegenbauer || f == Family::Jacobi;
}

DomainMap default_domain_map(Family f) {
  switch (f) {
    case Family::Legendre:
    case Family::Chebyshev:
    case Family::Gegenbauer:
    case Family::Jacobi:
    case Family::BSpline:
      return DomainMap::Tanh;
    default:
      return DomainMap::None;
  }
}

BasisSpec BasisSpec::standard_poly(int m) { return with_defaults(Family::StandardPoly, m); }
BasisSpec BasisSpec::legendre(int m) { return with_defaults(Family::Legendre, m); }
BasisSpec BasisSpec::chebyshev(int m) { return with_defaults(Family::Chebyshev, m); }

BasisSpec BasisSpec::gegenbauer(int m, double alpha) {
  auto s = with_defaults(Family::Gegenbauer, m);
  s.alpha = alpha;
  return s;
}

BasisSpec BasisSpec::jacobi(int m, double alpha, double beta) {
  auto s = with_defaults(Family::Jacobi, m);
  s.alpha = alpha;
  s.beta = beta;
  return s;
}

BasisSpec BasisSpec::bspline(int spline_order, int grid) {
  auto s = with_defaults(Family::BSpline, grid + spline_order - 1);
  s.spline_order = spline_order;
  s.grid = grid;
  return s;
}

BasisSpec BasisSpec::gaussian_rbf(int m) { return with_defaults(Family::GaussianRBF, m); }
BasisSpec BasisSpec::sine(int m) { return with_defaults(Family::Sine, m); }

BasisSpec BasisSpec::rational(int numerator_degree, int denominator_degree) {
  auto s = with_defaults(Family::Rational, numerator_degree + 1);
  s.numerator_degree = numerator_degree;
  s.denominator_degree = denominator_degree;
  return s;
}

int BasisSpec::params_per_function() const {
  switch (family) {
    case Family::GaussianRBF:
    case Family::Sine:
      return 3 * order;
    case Family::Rational:
      return numerator_degree + 1 + denominator_degree;
    default:
      return order;
  }
}

void BasisSpec::validate() const {
  const std::string name = to_string(family);
  if (order < 1) throw ConfigError(name + ": order must be >= 1");
  if (order > kMaxBasisOrder) {
    throw ConfigError(name + ": order " + std::to_string(order) + " exceeds the cap of " +
                      std::to_string(kMaxBasisOrder));
  }
  switch (family) {
    case Family::Gegenbauer:
      if (!(alpha > -0.5)) throw ConfigError("gegenbauer: alpha must be > -1/2");
      break;
    case Family::Jacobi:
      if (!(alpha > -1.0) || !(beta > -1.0)) throw ConfigError("jacobi: alpha and beta must be > -1");
      break;
    case Family::BSpline:
      if (spline_order < 1) throw ConfigError("bspline: spline order must be >= 1");
      if (grid < 1) throw ConfigError("bspline: grid size must be >= 1");
      if (order != grid + spline_order - 1) {
        throw ConfigError("bspline: order must equal grid + spline_order - 1 (" +
                          std::to_string(grid + spline_order - 1) + "), got " + std::to_string(order));
      }
      break;
    case Family::Rational:
      if (numerator_degree < 0 || denominator_degree < 0) {
        throw ConfigError("rational: degrees must be non-negative");
      }
      if (order != numerator_degree + 1) {
        throw ConfigError("rational: order must equal numerator_degree + 1");
      }
      if (numerator_degree + 1 > kMaxBasisOrder || denominator_degree > kMaxBasisOrder) {
        throw ConfigError("rational: degree exceeds the cap of " + std::to_string(kMaxBasisOrder));
      }
      break;
    default:
      break;
  }
}

DomainValue map_domain(const BasisSpec& spec, double x) {
  switch (spec.domain) {
    case DomainMap::None:
      return {x, 1.0};
    case DomainMap::Tanh: {
      const double t = std::tanh(x);
      return {t, 1.0 - t * t};
    }
    case DomainMap::Clamp: {
      constexpr double lo = -1.0 + kClampEps;
      constexpr double hi = 1.0 - kClampEps;
      if (x < lo) return {lo, 0.0};
      if (x > hi) return {hi, 0.0};
      return {x, 1.0};
    }
  }
  return {x, 1.0};
}

std::vector<double> bspline_knots(const BasisSpec& spec) {
  const int p = spec.spline_order - 1;
  std::vector<double> knots(static_cast<std::size_t>(spec.order + p + 1));
  for (int i = 0; i < static_cast<int>(knots.size()); ++i) {
    knots[static_cast<std::size_t>(i)] = bspline_knot(i, p, spec.grid);
  }
  return knots;
}

void eval_basis(const BasisSpec& spec, std::span<const double> row, double u, std::span<double> values,
                std::span<double> derivs) {
  const int m = spec.order;
  if (static_cast<int>(values.size()) < m || static_cast<int>(derivs.size()) < m) {
    throw DimensionError("eval_basis: output spans shorter than order " + std::to_string(m));
  }
  switch (spec.family) {
    case Family::BSpline:
      eval_bspline(spec, u, values.data(), derivs.data());
      return;
    case Family::GaussianRBF:
      for (int k = 0; k < m; ++k) {
        const double mu = row[static_cast<std::size_t>(m + k)];
        const double inv_var = std::exp(-2.0 * row[static_cast<std::size_t>(2 * m + k)]);
        const double d = u - mu;
        const double b = std::exp(-0.5 * d * d * inv_var);
        values[static_cast<std::size_t>(k)] = b;
        derivs[static_cast<std::size_t>(k)] = -b * d * inv_var;
      }
      return;
    case Family::Sine:
      for (int k = 0; k < m; ++k) {
        const double w = row[static_cast<std::size_t>(m + k)];
        const double arg = w * u + row[static_cast<std::size_t>(2 * m + k)];
        values[static_cast<std::size_t>(k)] = std::sin(arg);
        derivs[static_cast<std::size_t>(k)] = w * std::cos(arg);
      }
      return;
    case Family::Rational:
      // Numerator monomials; the denominator is not a basis in the linear sense.
      eval_three_term(BasisSpec::standard_poly(m), u, values.data(), derivs.data());
      return;
    default:
      eval_three_term(spec, u, values.data(), derivs.data());
      return;
  }
}

void eval_basis(const BasisSpec& spec, double u, std::span<double> values, std::span<double> derivs) {
  std::mt19937_64 unused(0);
  std::vector<double> row(static_cast<std::size_t>(spec.params_per_function()), 0.0);
  if (spec.family == Family::GaussianRBF || spec.family == Family::Sine) {
    row = init_row(spec, 0.0, 0.0, unused);
  }
  eval_basis(spec, row, u, values, derivs);
}

FunctionValue eval_function(const BasisSpec& spec, std::span<const double> row, double u,
                            std::span<double> dparams, std::span<double> scratch) {
  const int m = spec.order;
  if (static_cast<int>(row.size()) != spec.params_per_function()) {
    throw DimensionError("eval_function: row has " + std::to_string(row.size()) + " scalars, spec needs " +
                         std::to_string(spec.params_per_function()));
  }
  const bool want = !dparams.empty();
  if (want && dparams.size() != row.size()) {
    throw DimensionError("eval_function: dparams length mismatch");
  }
  std::span<double> vals = scratch.subspan(0, static_cast<std::size_t>(m));
  std::span<double> ders = scratch.subspan(static_cast<std::size_t>(m), static_cast<std::size_t>(m));

  if (spec.family == Family::Rational) {
    const int nd = spec.numerator_degree;
    const int dd = spec.denominator_degree;
    double p = 0.0, dp = 0.0, q = 0.0, dq = 0.0;
    double pw = 1.0;  // u^i
    double pw_prev = 0.0;
    for (int i = 0; i <= std::max(nd, dd); ++i) {
      if (i <= nd) {
        const double a = row[static_cast<std::size_t>(i)];
        p += a * pw;
        dp += a * static_cast<double>(i) * pw_prev;
      }
      if (i >= 1 && i <= dd) {
        const double b = row[static_cast<std::size_t>(nd + i)];
        q += b * pw;
        dq += b * static_cast<double>(i) * pw_prev;
      }
      pw_prev = (i == 0) ? 1.0 : pw_prev * u;
      pw *= u;
    }
    const double sgn = static_cast<double>((q > 0) - (q < 0));
    const double den = 1.0 + std::abs(q);
    const double value = p / den;
    const double du = (dp * den - p * sgn * dq) / (den * den);
    if (want) {
      double upow = 1.0;
      for (int i = 0; i <= std::max(nd, dd); ++i) {
        if (i <= nd) dparams[static_cast<std::size_t>(i)] = upow / den;
        if (i >= 1 && i <= dd) dparams[static_cast<std::size_t>(nd + i)] = -value * sgn * upow / den;
        upow *= u;
      }
    }
    return {value, du};
  }

  eval_basis(spec, row, u, vals, ders);
  double value = 0.0;
  double du = 0.0;
  for (int k = 0; k < m; ++k) {
    const double c = row[static_cast<std::size_t>(k)];
    value += c * vals[static_cast<std::size_t>(k)];
    du += c * ders[static_cast<std::size_t>(k)];
  }
  if (!want) return {value, du};

  for (int k = 0; k < m; ++k) dparams[static_cast<std::size_t>(k)] = vals[static_cast<std::size_t>(k)];
  if (spec.family == Family::GaussianRBF) {
    for (int k = 0; k < m; ++k) {
      const double c = row[static_cast<std::size_t>(k)];
      const double mu = row[static_cast<std::size_t>(m + k)];
      const double inv_var = std::exp(-2.0 * row[static_cast<std::size_t>(2 * m + k)]);
      const double d = u - mu;
      const double cb = c * vals[static_cast<std::size_t>(k)];
      dparams[static_cast<std::size_t>(m + k)] = cb * d * inv_var;
      dparams[static_cast<std::size_t>(2 * m + k)] = cb * d * d * inv_var;
    }
  } else if (spec.family == Family::Sine) {
    for (int k = 0; k < m; ++k) {
      const double c = row[static_cast<std::size_t>(k)];
      const double w = row[static_cast<std::size_t>(m + k)];
      const double cs = c * std::cos(w * u + row[static_cast<std::size_t>(2 * m + k)]);
      dparams[static_cast<std::size_t>(m + k)] = cs * u;
      dparams[static_cast<std::size_t>(2 * m + k)] = cs;
    }
  }
  return {value, du};
}

FunctionValue eval_function(const BasisSpec& spec, std::span<const double> row, double u,
                            std::span<double> dparams) {
  std::array<double, 2 * kMaxBasisOrder> scratch{};
  return eval_function(spec, row, u, dparams, scratch);
}

int CoefficientBank::function_count(BankLayout layout, int n_in, int n_out) {
  switch (layout) {
    case BankLayout::Global: return 1;
    case BankLayout::PerDimension: return n_in;
    case BankLayout::PerConnection: return n_in * n_out;
  }
  return 1;
}

std::optional<std::vector<double>> identity_row(const BasisSpec& spec) {
  const int m = spec.order;
  std::vector<double> row(static_cast<std::size_t>(spec.params_per_function()), 0.0);
  if (is_polynomial_family(spec.family)) {
    if (m < 2) return std::nullopt;
    const double slope = linear_slope(spec);
    row[1] = 1.0 / slope;
    if (spec.family == Family::Jacobi) {
      const double offset = (spec.alpha - spec.beta) / 2.0;  // constant part of P_1
      row[0] = -offset / slope;
    }
    return row;
  }
  if (spec.family == Family::BSpline) {
    const int p = spec.spline_order - 1;
    if (p < 1) return std::nullopt;
    // Greville abscissae reproduce u exactly on [-1, 1].
    for (int i = 0; i < m; ++i) {
      double s = 0.0;
      for (int j = 1; j <= p; ++j) s += bspline_knot(i + j, p, spec.grid);
      row[static_cast<std::size_t>(i)] = s / static_cast<double>(p);
    }
    return row;
  }
  if (spec.family == Family::Rational) {
    if (spec.numerator_degree < 1) return std::nullopt;
    row[1] = 1.0;
    return row;
  }
  return std::nullopt;
}

std::vector<double> init_row(const BasisSpec& spec, double sigma0, double decay, std::mt19937_64& rng) {
  const int m = spec.order;
  const int width = spec.params_per_function();
  std::vector<double> row(static_cast<std::size_t>(width), 0.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto noise = [&](int degree_index) {
    if (sigma0 <= 0.0) return 0.0;
    const double sd = sigma0 / std::sqrt(std::pow(static_cast<double>(degree_index + 1), decay));
    return sd * normal(rng);
  };

  if (spec.family == Family::Rational) {
    for (int i = 0; i <= spec.numerator_degree; ++i) row[static_cast<std::size_t>(i)] = noise(i);
    for (int j = 1; j <= spec.denominator_degree; ++j) {
      row[static_cast<std::size_t>(spec.numerator_degree + j)] = noise(j);
    }
    if (spec.numerator_degree >= 1) row[1] += 1.0;
    return row;
  }

  for (int k = 0; k < m; ++k) row[static_cast<std::size_t>(k)] = noise(k);

  if (auto ident = identity_row(spec)) {
    for (int k = 0; k < m; ++k) row[static_cast<std::size_t>(k)] += (*ident)[static_cast<std::size_t>(k)];
  }
  if (spec.family == Family::GaussianRBF) {
    const double spacing = m > 1 ? 2.0 / static_cast<double>(m - 1) : 1.0;
    for (int k = 0; k < m; ++k) {
      row[static_cast<std::size_t>(m + k)] = m > 1 ? -1.0 + spacing * static_cast<double>(k) : 0.0;
      row[static_cast<std::size_t>(2 * m + k)] = std::log(spacing);
    }
  } else if (spec.family == Family::Sine) {
    for (int k = 0; k < m; ++k) {
      row[static_cast<std::size_t>(m + k)] = static_cast<double>(k + 1);
      row[static_cast<std::size_t>(2 * m + k)] = 0.0;
    }
    row[0] += 1.0;  // sin(u) ~ u near the origin
  }
  return row;
}

CoefficientBank make_bank(const BasisSpec& spec, BankLayout layout, int n_in, int n_out, double sigma0,
                          double decay, std::mt19937_64& rng) {
  spec.validate();
  CoefficientBank bank;
  bank.layout = layout;
  bank.spec = spec;
  bank.n_in = n_in;
  bank.n_out = n_out;
  const int f = CoefficientBank::function_count(layout, n_in, n_out);
  bank.params.resize(f, spec.params_per_function());
  for (int r = 0; r < f; ++r) {
    auto row = init_row(spec, sigma0, decay, rng);
    std::copy(row.begin(), row.end(), bank.row(r).begin());
  }
  return bank;
}

Var batch_eval(const BasisSpec& spec, const Var& bank, const Var& x, Assignment assignment) {
  const Tensor& xv = x.value();
  const Tensor& bv = bank.value();
  const int width = spec.params_per_function();
  if (bv.cols() != width) {
    throw DimensionError("batch_eval: bank has " + std::to_string(bv.cols()) + " scalars per row, spec needs " +
                         std::to_string(width));
  }
  if (assignment == Assignment::Global && bv.rows() != 1) {
    throw DimensionError("batch_eval: global assignment needs a single-row bank, got " + shape_str(bv));
  }
  if (assignment == Assignment::PerColumn && bv.rows() != xv.cols()) {
    throw DimensionError("batch_eval: per-column assignment needs " + std::to_string(xv.cols()) +
                         " bank rows, got " + std::to_string(bv.rows()));
  }
  const auto n = xv.rows();
  const auto d = xv.cols();
  Tensor out(n, d);
  Tensor dx(n, d);
  std::array<double, 2 * kMaxBasisOrder> scratch{};
  for (Eigen::Index c = 0; c < d; ++c) {
    const int r = assignment == Assignment::Global ? 0 : static_cast<int>(c);
    std::span<const double> row(bv.data() + static_cast<std::ptrdiff_t>(r) * width, static_cast<std::size_t>(width));
    for (Eigen::Index s = 0; s < n; ++s) {
      const auto dm = map_domain(spec, xv(s, c));
      const auto fv = eval_function(spec, row, dm.u, {}, scratch);
      out(s, c) = fv.value;
      dx(s, c) = fv.du * dm.du_dx;
    }
  }
  Tape* t = x.tape();
  const int ix = x.id();
  const int ib = bank.id();
  return t->record("batch_eval", {x, bank}, std::move(out),
                   [t, ix, ib, spec, assignment, dx = std::move(dx)](const Tensor& g) {
                     const Tensor& xv = t->value(ix);
                     const Tensor& bv = t->value(ib);
                     const int width = static_cast<int>(bv.cols());
                     Tensor gb = Tensor::Zero(bv.rows(), bv.cols());
                     std::array<double, 2 * kMaxBasisOrder> scratch{};
                     std::vector<double> dp(static_cast<std::size_t>(width));
                     for (Eigen::Index c = 0; c < xv.cols(); ++c) {
                       const int r = assignment == Assignment::Global ? 0 : static_cast<int>(c);
                       std::span<const double> row(bv.data() + static_cast<std::ptrdiff_t>(r) * width,
                                                   static_cast<std::size_t>(width));
                       for (Eigen::Index s = 0; s < xv.rows(); ++s) {
                         const double gs = g(s, c);
                         if (gs == 0.0) continue;
                         const auto dm = map_domain(spec, xv(s, c));
                         eval_function(spec, row, dm.u, dp, scratch);
                         for (int k = 0; k < width; ++k) gb(r, k) += gs * dp[static_cast<std::size_t>(k)];
                       }
                     }
                     return std::vector<Tensor>{Tensor(g.cwiseProduct(dx)), std::move(gb)};
                   });
}

}  // namespace dfkan

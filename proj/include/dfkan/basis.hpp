#pragma once

#include "dfkan/autodiff.hpp"
#include "dfkan/tensor.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dfkan {

enum class Family {
  StandardPoly,
  Legendre,
  Chebyshev,
  Gegenbauer,
  Jacobi,
  BSpline,
  GaussianRBF,
  Sine,
  Rational,
};

enum class DomainMap { None, Tanh, Clamp };

inline constexpr int kMaxBasisOrder = 64;
inline constexpr double kClampEps = 1e-6;

std::string to_string(Family f);
std::string to_string(DomainMap d);
Family family_from_string(const std::string& s);
DomainMap domain_map_from_string(const std::string& s);

// Polynomial-type families: the learnable function is a plain linear
// combination of polynomials in u.
bool is_polynomial_family(Family f);

// How a learnable univariate function is parameterized.
//
// `order` is the number of basis coefficients per function. It is derived for
// BSpline (grid + spline_order - 1) and Rational (numerator_degree + 1); use
// the named constructors so it stays consistent.
struct BasisSpec {
  Family family = Family::Legendre;
  int order = 4;
  double alpha = 1.0;  // Gegenbauer alpha, Jacobi alpha
  double beta = 1.0;   // Jacobi beta
  int spline_order = 4;  // B-spline order k (degree k-1)
  int grid = 5;          // B-spline interval count G
  int numerator_degree = 3;
  int denominator_degree = 2;
  DomainMap domain = DomainMap::None;

  static BasisSpec standard_poly(int m);
  static BasisSpec legendre(int m);
  static BasisSpec chebyshev(int m);
  static BasisSpec gegenbauer(int m, double alpha = 1.0);
  static BasisSpec jacobi(int m, double alpha = 1.0, double beta = 1.0);
  static BasisSpec bspline(int spline_order, int grid);
  static BasisSpec gaussian_rbf(int m);
  static BasisSpec sine(int m);
  static BasisSpec rational(int numerator_degree, int denominator_degree);

  // Learnable scalars per function (m, 3m or N+1+M).
  int params_per_function() const;
  // Throws ConfigError when the spec violates a family constraint.
  void validate() const;

  bool operator==(const BasisSpec&) const = default;
};

DomainMap default_domain_map(Family f);

struct DomainValue {
  double u;
  double du_dx;
};

DomainValue map_domain(const BasisSpec& spec, double x);

// Clamped uniform knot vector on [-1, 1] with m + k knots.
std::vector<double> bspline_knots(const BasisSpec& spec);

// ---- basis recurrences ---------------------------------------------------
// Values and input-derivatives of the m basis functions at u, written to
// `values` and `derivs` (each of length >= m). Families with per-function
// shape parameters (RBF, Sine) need a bank row; the overload without one
// evaluates them at their initial centers/frequencies.

template <typename Scalar>
void eval_three_term(const BasisSpec& spec, Scalar u, Scalar* values, Scalar* derivs) {
  const int m = spec.order;
  values[0] = Scalar(1);
  derivs[0] = Scalar(0);
  if (m == 1) return;
  const Scalar a = Scalar(spec.alpha);
  const Scalar b = Scalar(spec.beta);
  switch (spec.family) {
    case Family::StandardPoly:
      for (int k = 1; k < m; ++k) {
        values[k] = values[k - 1] * u;
        derivs[k] = Scalar(k) * values[k - 1];
      }
      return;
    case Family::Legendre:
    case Family::Chebyshev:
      values[1] = u;
      derivs[1] = Scalar(1);
      break;
    case Family::Gegenbauer:
      values[1] = Scalar(2) * a * u;
      derivs[1] = Scalar(2) * a;
      break;
    case Family::Jacobi:
      values[1] = (a + Scalar(1)) + (a + b + Scalar(2)) * (u - Scalar(1)) / Scalar(2);
      derivs[1] = (a + b + Scalar(2)) / Scalar(2);
      break;
    default:
      throw ContractError("eval_three_term: not a polynomial family");
  }
  for (int n = 2; n < m; ++n) {
    const Scalar nn = Scalar(n);
    Scalar ca, cb = Scalar(0), cc;
    switch (spec.family) {
      case Family::Legendre:
        ca = (Scalar(2) * nn - Scalar(1)) / nn;
        cc = (nn - Scalar(1)) / nn;
        break;
      case Family::Chebyshev:
        ca = Scalar(2);
        cc = Scalar(1);
        break;
      case Family::Gegenbauer:
        ca = Scalar(2) * (nn + a - Scalar(1)) / nn;
        cc = (nn + Scalar(2) * a - Scalar(2)) / nn;
        break;
      default: {  // Jacobi
        const Scalar s = Scalar(2) * nn + a + b;
        const Scalar d = Scalar(2) * nn * (nn + a + b) * (s - Scalar(2));
        ca = (s - Scalar(1)) * s * (s - Scalar(2)) / d;
        cb = (s - Scalar(1)) * (a * a - b * b) / d;
        cc = Scalar(2) * (nn + a - Scalar(1)) * (nn + b - Scalar(1)) * s / d;
        break;
      }
    }
    values[n] = (ca * u + cb) * values[n - 1] - cc * values[n - 2];
    derivs[n] = ca * values[n - 1] + (ca * u + cb) * derivs[n - 1] - cc * derivs[n - 2];
  }
}

// Clamped uniform knot t_i on [-1, 1] for `grid` intervals and degree p.
inline double bspline_knot(int i, int degree, int grid) {
  if (i <= degree) return -1.0;
  if (i >= grid + degree) return 1.0;
  return -1.0 + 2.0 * static_cast<double>(i - degree) / static_cast<double>(grid);
}

// Cox-de Boor recursion over the clamped uniform knot vector.
template <typename Scalar>
void eval_bspline(const BasisSpec& spec, Scalar u, Scalar* values, Scalar* derivs) {
  constexpr int kCap = kMaxBasisOrder + 16;
  const int m = spec.order;
  const int p = spec.spline_order - 1;
  const int g = spec.grid;
  const int nk = m + p + 1;
  auto t = [&](int i) { return Scalar(bspline_knot(i, p, g)); };
  std::array<Scalar, kCap> cur{};
  std::array<Scalar, kCap> prev{};
  if (u >= Scalar(-1) && u <= Scalar(1)) {
    // Non-degenerate interval containing u; the right end belongs to the last one.
    int span = p + static_cast<int>(std::floor(static_cast<double>((u + Scalar(1)) / Scalar(2)) * g));
    if (span > m - 1) span = m - 1;
    if (span < p) span = p;
    while (span < m - 1 && u >= t(span + 1)) ++span;
    while (span > p && u < t(span)) --span;
    cur[static_cast<std::size_t>(span)] = Scalar(1);
  }
  int len = nk - 1;
  for (int deg = 1; deg <= p; ++deg) {
    prev = cur;
    --len;
    for (int i = 0; i < len; ++i) {
      Scalar v = Scalar(0);
      const Scalar d1 = t(i + deg) - t(i);
      const Scalar d2 = t(i + deg + 1) - t(i + 1);
      if (d1 > Scalar(0)) v += (u - t(i)) / d1 * prev[static_cast<std::size_t>(i)];
      if (d2 > Scalar(0)) v += (t(i + deg + 1) - u) / d2 * prev[static_cast<std::size_t>(i + 1)];
      cur[static_cast<std::size_t>(i)] = v;
    }
  }
  for (int i = 0; i < m; ++i) {
    values[i] = cur[static_cast<std::size_t>(i)];
    Scalar d = Scalar(0);
    if (p > 0) {
      const Scalar d1 = t(i + p) - t(i);
      const Scalar d2 = t(i + p + 1) - t(i + 1);
      if (d1 > Scalar(0)) d += Scalar(p) / d1 * prev[static_cast<std::size_t>(i)];
      if (d2 > Scalar(0)) d -= Scalar(p) / d2 * prev[static_cast<std::size_t>(i + 1)];
    }
    derivs[i] = d;
  }
}

// Row layout of a coefficient bank, per family:
//   polynomial / B-spline: [c_1 .. c_m]
//   GaussianRBF:           [c_1 .. c_m | mu_1 .. mu_m | log sigma_1 .. log sigma_m]
//   Sine:                  [c_1 .. c_m | omega_1 .. omega_m | phase_1 .. phase_m]
//   Rational:              [a_0 .. a_N | b_1 .. b_M]
void eval_basis(const BasisSpec& spec, std::span<const double> row, double u, std::span<double> values,
                std::span<double> derivs);
void eval_basis(const BasisSpec& spec, double u, std::span<double> values, std::span<double> derivs);

struct FunctionValue {
  double value;
  double du;  // d phi / d u
};

// phi(u) for one bank row, with d phi / d(each row scalar) written to
// `dparams` when it is non-empty. `scratch` must hold at least 2m doubles.
FunctionValue eval_function(const BasisSpec& spec, std::span<const double> row, double u,
                            std::span<double> dparams, std::span<double> scratch);
FunctionValue eval_function(const BasisSpec& spec, std::span<const double> row, double u,
                            std::span<double> dparams = {});

// ---- coefficient banks ---------------------------------------------------

enum class BankLayout { Global, PerDimension, PerConnection };

struct CoefficientBank {
  BankLayout layout = BankLayout::Global;
  BasisSpec spec;
  int n_in = 1;
  int n_out = 1;
  Tensor params;  // functions x params_per_function

  static int function_count(BankLayout layout, int n_in, int n_out);
  int functions() const { return static_cast<int>(params.rows()); }
  // Row index of the function on connection (i -> j); i-major, j-minor.
  int connection_row(int i, int j) const { return i * n_out + j; }
  std::span<const double> row(int r) const {
    return {params.data() + static_cast<std::ptrdiff_t>(r) * params.cols(),
            static_cast<std::size_t>(params.cols())};
  }
  std::span<double> row(int r) {
    return {params.data() + static_cast<std::ptrdiff_t>(r) * params.cols(),
            static_cast<std::size_t>(params.cols())};
  }
};

// Row making phi(u) == u exactly, when the family can represent it.
std::optional<std::vector<double>> identity_row(const BasisSpec& spec);

// One freshly initialized row: variance-decayed coefficients (degree index d
// gets variance sigma0^2 / (d + 1)^decay), identity boost where available,
// RBF centers/widths and sine frequencies at their defaults.
std::vector<double> init_row(const BasisSpec& spec, double sigma0, double decay, std::mt19937_64& rng);

CoefficientBank make_bank(const BasisSpec& spec, BankLayout layout, int n_in, int n_out, double sigma0,
                          double decay, std::mt19937_64& rng);

enum class Assignment { Global, PerColumn };

// Applies phi elementwise to X: every element uses row 0 (Global) or column
// i uses row i (PerColumn). Registers gradients for both X and the bank.
Var batch_eval(const BasisSpec& spec, const Var& bank, const Var& x, Assignment assignment);

}  // namespace dfkan

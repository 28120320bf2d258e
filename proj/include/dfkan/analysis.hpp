#pragma once

#include "dfkan/model.hpp"
#include "dfkan/tensor.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dfkan {

// Dense univariate polynomial, coefficient k multiplies x^k. Supports the
// arithmetic the basis recurrences use, so eval_three_term<Polynomial> yields
// monomial forms directly.
class Polynomial {
 public:
  Polynomial() : c_{0.0} {}
  Polynomial(double constant) : c_{constant} {}  // NOLINT(google-explicit-constructor)
  explicit Polynomial(std::vector<double> coeffs);

  static Polynomial x() { return Polynomial(std::vector<double>{0.0, 1.0}); }

  int degree() const { return static_cast<int>(c_.size()) - 1; }
  const std::vector<double>& coeffs() const { return c_; }
  double operator[](int k) const { return k < static_cast<int>(c_.size()) ? c_[static_cast<std::size_t>(k)] : 0.0; }
  double operator()(double x) const;
  bool is_constant() const { return c_.size() == 1; }

  // p(q(x)).
  Polynomial compose(const Polynomial& q) const;

  Polynomial& operator+=(const Polynomial& o);
  Polynomial& operator-=(const Polynomial& o);
  Polynomial& operator*=(const Polynomial& o);
  // Division by a constant polynomial only.
  Polynomial& operator/=(const Polynomial& o);

  friend Polynomial operator+(Polynomial a, const Polynomial& b) { return a += b; }
  friend Polynomial operator-(Polynomial a, const Polynomial& b) { return a -= b; }
  friend Polynomial operator*(Polynomial a, const Polynomial& b) { return a *= b; }
  friend Polynomial operator/(Polynomial a, const Polynomial& b) { return a /= b; }
  friend Polynomial operator-(Polynomial a) { return a *= Polynomial(-1.0); }

 private:
  void trim();
  std::vector<double> c_;
};

// Monomial form of each basis polynomial B_0..B_{m-1}; row k holds B_k.
std::vector<Polynomial> basis_monomials(const BasisSpec& spec);

// Training input range recovered from the model's input normalizer, or
// [-1, 1] when inputs are not normalized.
std::pair<double, double> input_range(const Model& model, int feature = 0);
std::vector<double> probe_grid(double lo, double hi, int points = 201);

struct DecompositionCurve {
  int neuron;
  double weight;  // output weight used for ranking
  std::vector<double> values;
};

struct Decomposition {
  std::vector<double> grid;
  std::vector<DecompositionCurve> curves;  // ranked by |weight|, descending
  std::vector<double> sum;                 // sum of all curves
  double output_bias = 0.0;
  std::vector<double> prediction;
};

// Per-neuron contributions of hidden layer `layer` to a single-output head
// that directly follows it. Output normalization is folded into the curves
// and the bias, so sum + output_bias reproduces the prediction.
Decomposition decompose_activations(Model& model, int layer, const std::vector<double>& grid);

struct PrunePoint {
  double kept_fraction;
  long long kept;
  double metric;
};

struct PruneReport {
  bool applicable = true;
  std::string note;
  double baseline = 0.0;
  double retain = 0.9;
  long long total = 0;
  std::vector<PrunePoint> sweep;       // fixed grid, kept fraction strictly decreasing
  std::vector<PrunePoint> refinement;  // bisection probes
  long long effective_params = 0;
};

// Global magnitude pruning over the learnable walk. The metric is test R².
PruneReport effective_params(const Model& model, const Tensor& X_test, const Tensor& y_test, double retain = 0.90);

// Copy of `model` with the `drop` smallest-magnitude learnable scalars zeroed.
Model prune_smallest(const Model& model, long long drop);

struct SymbolicFormula {
  bool eligible = false;
  std::string reason;  // why extraction was refused
  std::vector<std::vector<double>> coefficients;  // per output, a_0 .. a_d
  int composed_degree = 0;
  int max_degree = -1;
  double residual = 0.0;  // max |model - polynomial| over the probe grid
  double lo = -1.0;
  double hi = 1.0;
};

inline constexpr int kMaxComposedDegree = 64;

// Returns the reason the model is ineligible, or nothing.
std::optional<std::string> symbolic_ineligibility(const Model& model);
// Exact monomial form of each output, before truncation.
std::vector<Polynomial> model_polynomials(const Model& model);
// Coefficients are truncated at min(max_degree, composed degree); a negative
// max_degree keeps the full composition.
SymbolicFormula extract_symbolic(Model& model, int max_degree = -1, int probe_points = 201);

struct AttentionEntry {
  int feature;
  std::string name;
  double alpha;
  double logit;
};

std::vector<AttentionEntry> attention_report(const Model& model, const std::vector<std::string>& names = {});

struct GradientField {
  std::vector<double> xs;
  std::vector<double> ys;
  Tensor Z;      // ys.size() x xs.size()
  Tensor dZdx;
  Tensor dZdy;
  Tensor magnitude;
};

// Exact input gradients by reverse mode; row i holds y = ys[i].
GradientField gradient_field(Model& model, const std::vector<double>& xs, const std::vector<double>& ys);

// d output / d input for every row of X (same shape as X).
Tensor input_gradients(Model& model, const Tensor& X);

}  // namespace dfkan

#include "dfkan/analysis.hpp"

#include "dfkan/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dfkan {

// ---- Polynomial -----------------------------------------------------------

Polynomial::Polynomial(std::vector<double> coeffs) : c_(std::move(coeffs)) {
  if (c_.empty()) c_.push_back(0.0);
  trim();
}

void Polynomial::trim() {
  while (c_.size() > 1 && c_.back() == 0.0) c_.pop_back();
}

double Polynomial::operator()(double x) const {
  double acc = 0.0;
  for (auto it = c_.rbegin(); it != c_.rend(); ++it) acc = acc * x + *it;
  return acc;
}

Polynomial Polynomial::compose(const Polynomial& q) const {
  Polynomial out(c_.back());
  for (int k = degree() - 1; k >= 0; --k) {
    out *= q;
    out += Polynomial(c_[static_cast<std::size_t>(k)]);
  }
  return out;
}

Polynomial& Polynomial::operator+=(const Polynomial& o) {
  if (o.c_.size() > c_.size()) c_.resize(o.c_.size(), 0.0);
  for (std::size_t k = 0; k < o.c_.size(); ++k) c_[k] += o.c_[k];
  trim();
  return *this;
}

Polynomial& Polynomial::operator-=(const Polynomial& o) {
  if (o.c_.size() > c_.size()) c_.resize(o.c_.size(), 0.0);
  for (std::size_t k = 0; k < o.c_.size(); ++k) c_[k] -= o.c_[k];
  trim();
  return *this;
}

Polynomial& Polynomial::operator*=(const Polynomial& o) {
  std::vector<double> out(c_.size() + o.c_.size() - 1, 0.0);
  for (std::size_t i = 0; i < c_.size(); ++i) {
    for (std::size_t j = 0; j < o.c_.size(); ++j) out[i + j] += c_[i] * o.c_[j];
  }
  c_ = std::move(out);
  trim();
  return *this;
}

Polynomial& Polynomial::operator/=(const Polynomial& o) {
  if (!o.is_constant()) throw ContractError("Polynomial: division by a non-constant polynomial");
  for (auto& v : c_) v /= o.c_[0];
  trim();
  return *this;
}

std::vector<Polynomial> basis_monomials(const BasisSpec& spec) {
  if (!is_polynomial_family(spec.family)) {
    throw ContractError("basis_monomials: " + to_string(spec.family) + " is not a polynomial family");
  }
  std::vector<Polynomial> values(static_cast<std::size_t>(spec.order));
  std::vector<Polynomial> derivs(static_cast<std::size_t>(spec.order));
  eval_three_term<Polynomial>(spec, Polynomial::x(), values.data(), derivs.data());
  return values;
}

// ---- shared helpers -------------------------------------------------------

std::pair<double, double> input_range(const Model& model, int feature) {
  if (!model.input_norm.active()) return {-1.0, 1.0};
  const double sc = model.input_norm.scale(feature);
  const double off = model.input_norm.offset(feature);
  return {(-1.0 - off) / sc, (1.0 - off) / sc};
}

std::vector<double> probe_grid(double lo, double hi, int points) {
  if (points < 2) throw ConfigError("probe grid needs at least 2 points");
  std::vector<double> g(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) {
    g[static_cast<std::size_t>(i)] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
  }
  g.back() = hi;
  return g;
}

namespace {

Tensor column(const std::vector<double>& v) {
  Tensor t(static_cast<Eigen::Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) t(static_cast<Eigen::Index>(i), 0) = v[i];
  return t;
}

std::pair<double, double> output_affine(const Model& model) {
  if (!model.output_norm.active()) return {1.0, 0.0};
  return {model.output_norm.scale(0), model.output_norm.offset(0)};
}

// Infer-mode regularization at `slot` as a per-unit affine map (dropout is
// the identity outside training).
void reg_affine(const LayerConfig& cfg, const LayerParams& p, RegSlot slot, Eigen::RowVectorXd& mul,
                Eigen::RowVectorXd& add) {
  mul = Eigen::RowVectorXd::Ones(cfg.n_out);
  add = Eigen::RowVectorXd::Zero(cfg.n_out);
  if (!cfg.reg.active(slot) || !cfg.reg.use_batchnorm) return;
  const BatchNormState& bn = slot == RegSlot::Pre ? *p.bn_pre : *p.bn_post;
  for (int j = 0; j < cfg.n_out; ++j) {
    const double k = bn.gamma(0, j) / std::sqrt(bn.running_var(0, j) + bn.eps);
    mul(j) = k;
    add(j) = bn.beta(0, j) - k * bn.running_mean(0, j);
  }
}

}  // namespace

// ---- decomposition --------------------------------------------------------

Decomposition decompose_activations(Model& model, int layer, const std::vector<double>& grid) {
  const int n_layers = static_cast<int>(model.layers.size());
  if (model.config.n_inputs() != 1) {
    throw ConfigError("decompose: model has " + std::to_string(model.config.n_inputs()) +
                      " inputs; curves need a single input");
  }
  if (layer < 0 || layer + 1 >= n_layers) {
    throw ConfigError("decompose: layer " + std::to_string(layer) + " is not a hidden layer");
  }
  if (layer + 2 != n_layers) {
    throw ConfigError("decompose: layer " + std::to_string(layer) + " must feed the output layer directly");
  }
  const LayerConfig& head = model.config.layers.back();
  const LayerParams& hp = model.layers.back();
  if (head.n_out != 1) throw ConfigError("decompose: output layer must have one unit");
  const bool head_linear_out = head.output.kind == StrategyKind::None ||
                               (head.output.kind == StrategyKind::Fixed && head.output.fixed == FixedFn::Identity);
  if (!head_linear_out) throw ConfigError("decompose: output layer activation must be linear");
  if (grid.empty()) throw ConfigError("decompose: empty probe grid");

  Tape tape;
  ForwardContext ctx(tape, Mode::Infer);
  ctx.trainable = false;
  ModelTrace trace;
  Var pred = model_forward(ctx, model, tape.constant(column(grid)), &trace);
  const Tensor z = trace.layers[static_cast<std::size_t>(layer)].z.value();
  const int hidden = static_cast<int>(z.cols());

  // Head: y = A * (sum_j c_j + b) + B, then the output normalizer.
  Eigen::RowVectorXd m1, a1, m2, a2;
  reg_affine(head, hp, RegSlot::Pre, m1, a1);
  reg_affine(head, hp, RegSlot::Post, m2, a2);
  const auto [osc, ooff] = output_affine(model);
  const double A = osc * m2(0) * m1(0);
  const double bias = hp.b.size() > 0 ? hp.b(0, 0) : 0.0;
  const double B = osc * (m2(0) * a1(0) + a2(0)) + ooff;

  Decomposition d;
  d.grid = grid;
  d.output_bias = A * bias + B;
  const Tensor& pv = pred.value();
  d.prediction.assign(pv.data(), pv.data() + pv.size());
  d.sum.assign(grid.size(), 0.0);

  std::optional<Var> bank;
  if (hp.input_bank) bank = tape.constant(hp.input_bank->params);
  Tensor t;
  if (head.input.kind != StrategyKind::PerConnection) {
    t = apply_input_transform(tape.constant(z), head.input, bank).value();
  }
  for (int j = 0; j < hidden; ++j) {
    Tensor cj;
    if (head.input.kind == StrategyKind::PerConnection) {
      Tensor w = Tensor::Constant(1, 1, hp.W(0, j));
      Tensor row = hp.input_bank->params.row(hp.input_bank->connection_row(j, 0));
      cj = per_connection_linear(tape.constant(z.col(j)), tape.constant(w), tape.constant(row),
                                 head.input.basis)
               .value();
    } else {
      cj = hp.W(0, j) * t.col(j);
    }
    DecompositionCurve c{j, hp.W(0, j), std::vector<double>(grid.size())};
    for (std::size_t g = 0; g < grid.size(); ++g) {
      c.values[g] = A * cj(static_cast<Eigen::Index>(g), 0);
      d.sum[g] += c.values[g];
    }
    d.curves.push_back(std::move(c));
  }
  std::stable_sort(d.curves.begin(), d.curves.end(), [](const DecompositionCurve& a, const DecompositionCurve& b) {
    return std::abs(a.weight) > std::abs(b.weight);
  });
  return d;
}

// ---- pruning --------------------------------------------------------------

Model prune_smallest(const Model& model, long long drop) {
  Model copy = model;
  auto params = model_parameters(copy);
  struct Slot {
    double mag;
    long long order;
    double* ptr;
  };
  std::vector<Slot> slots;
  long long idx = 0;
  for (auto& p : params) {
    for (Eigen::Index k = 0; k < p.tensor->size(); ++k) {
      slots.push_back({std::abs(p.tensor->data()[k]), idx++, p.tensor->data() + k});
    }
  }
  drop = std::clamp<long long>(drop, 0, static_cast<long long>(slots.size()));
  std::stable_sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) { return a.mag < b.mag; });
  for (long long k = 0; k < drop; ++k) *slots[static_cast<std::size_t>(k)].ptr = 0.0;
  return copy;
}

PruneReport effective_params(const Model& model, const Tensor& X_test, const Tensor& y_test, double retain) {
  PruneReport rep;
  rep.retain = retain;
  Model base = model;
  rep.total = enumerate_scalars(base);
  rep.baseline = r2(predict(base, X_test), y_test);
  if (!(rep.baseline > 0.0)) {
    rep.applicable = false;
    rep.note = "baseline R2 <= 0";
    rep.effective_params = rep.total;
    return rep;
  }
  const double threshold = retain * rep.baseline;
  auto score = [&](long long kept) {
    Model m = prune_smallest(model, rep.total - kept);
    const Tensor pred = predict(m, X_test);
    return pred.allFinite() ? r2(pred, y_test) : -std::numeric_limits<double>::infinity();
  };
  const double total = static_cast<double>(rep.total);

  long long last_pass = rep.total;
  std::optional<long long> first_fail;
  double frac = 1.0;
  long long prev_kept = -1;
  while (true) {
    const long long kept = std::llround(frac * total);
    if (kept != prev_kept) {
      const double metric = kept == rep.total ? rep.baseline : score(kept);
      rep.sweep.push_back({static_cast<double>(kept) / total, kept, metric});
      if (!first_fail) {
        if (metric >= threshold) last_pass = kept;
        else first_fail = kept;
      }
      prev_kept = kept;
    }
    if (kept == 0) break;
    frac *= 0.5;
  }
  if (!first_fail) {
    rep.effective_params = 0;
    return rep;
  }
  long long lo = *first_fail, hi = last_pass;
  while (hi - lo > 1) {
    const long long mid = lo + (hi - lo) / 2;
    const double metric = score(mid);
    rep.refinement.push_back({static_cast<double>(mid) / total, mid, metric});
    if (metric >= threshold) hi = mid;
    else lo = mid;
  }
  rep.effective_params = hi;
  return rep;
}

// ---- symbolic extraction --------------------------------------------------

std::optional<std::string> symbolic_ineligibility(const Model& model) {
  if (model.config.n_inputs() != 1) return "model has " + std::to_string(model.config.n_inputs()) + " inputs";
  for (std::size_t l = 0; l < model.config.layers.size(); ++l) {
    const auto& cfg = model.config.layers[l];
    const std::string where = "layer " + std::to_string(l) + ": ";
    for (const Strategy* s : {&cfg.input, &cfg.output}) {
      if (s->kind == StrategyKind::Fixed && s->fixed != FixedFn::Identity) {
        return where + "fixed function " + to_string(s->fixed) + " is not polynomial";
      }
      if (s->learnable()) {
        if (!is_polynomial_family(s->basis.family)) return where + "non-polynomial family";
        if (s->basis.domain != DomainMap::None) {
          return where + "domain map " + to_string(s->basis.domain) + " is not polynomial";
        }
      }
    }
  }
  return std::nullopt;
}

namespace {

Polynomial function_poly(const BasisSpec& spec, std::span<const double> row, const std::vector<Polynomial>& mono) {
  Polynomial p;
  for (int k = 0; k < spec.order; ++k) p += mono[static_cast<std::size_t>(k)] * Polynomial(row[static_cast<std::size_t>(k)]);
  return p;
}

Polynomial checked_compose(const Polynomial& outer, const Polynomial& inner) {
  if (static_cast<long long>(outer.degree()) * std::max(inner.degree(), 1) > kMaxComposedDegree) {
    throw ConfigError("composed degree exceeds " + std::to_string(kMaxComposedDegree));
  }
  return outer.compose(inner);
}

// Elementwise S1..S3 transform on polynomial columns.
std::vector<Polynomial> transform(const std::vector<Polynomial>& h, const Strategy& s,
                                  const std::optional<CoefficientBank>& bank) {
  if (!s.learnable()) return h;
  const auto mono = basis_monomials(s.basis);
  std::vector<Polynomial> out;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const int r = s.kind == StrategyKind::Global ? 0 : static_cast<int>(i);
    out.push_back(checked_compose(function_poly(s.basis, bank->row(r), mono), h[i]));
  }
  return out;
}

void apply_affine(std::vector<Polynomial>& h, const Eigen::RowVectorXd& mul, const Eigen::RowVectorXd& add) {
  for (std::size_t j = 0; j < h.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    h[j] = h[j] * Polynomial(mul(jj)) + Polynomial(add(jj));
  }
}

}  // namespace

std::vector<Polynomial> model_polynomials(const Model& model) {
  if (auto why = symbolic_ineligibility(model)) throw ConfigError("symbolic extraction: " + *why);
  std::vector<Polynomial> h{Polynomial::x()};
  if (model.input_norm.active()) apply_affine(h, model.input_norm.scale, model.input_norm.offset);
  if (model.attention_logits) {
    const Eigen::RowVectorXd alpha = attention_weights(*model.attention_logits);
    h[0] = h[0] * Polynomial(alpha(0) * static_cast<double>(alpha.size()));
  }
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& cfg = model.config.layers[l];
    const auto& p = model.layers[l];
    std::vector<Polynomial> s(static_cast<std::size_t>(cfg.n_out));
    if (cfg.input.kind == StrategyKind::PerConnection) {
      const auto mono = basis_monomials(cfg.input.basis);
      for (int i = 0; i < cfg.n_in; ++i) {
        for (int j = 0; j < cfg.n_out; ++j) {
          const Polynomial phi = function_poly(cfg.input.basis, p.input_bank->row(p.input_bank->connection_row(i, j)), mono);
          s[static_cast<std::size_t>(j)] += checked_compose(phi, h[static_cast<std::size_t>(i)]) * Polynomial(p.W(j, i));
        }
      }
    } else {
      const auto t = transform(h, cfg.input, p.input_bank);
      for (int j = 0; j < cfg.n_out; ++j) {
        for (int i = 0; i < cfg.n_in; ++i) s[static_cast<std::size_t>(j)] += t[static_cast<std::size_t>(i)] * Polynomial(p.W(j, i));
      }
    }
    if (p.b.size() > 0) {
      for (int j = 0; j < cfg.n_out; ++j) s[static_cast<std::size_t>(j)] += Polynomial(p.b(0, j));
    }
    Eigen::RowVectorXd mul, add;
    reg_affine(cfg, p, RegSlot::Pre, mul, add);
    apply_affine(s, mul, add);
    s = transform(s, cfg.output, p.output_bank);
    reg_affine(cfg, p, RegSlot::Post, mul, add);
    apply_affine(s, mul, add);
    h = std::move(s);
  }
  if (model.output_norm.active()) apply_affine(h, model.output_norm.scale, model.output_norm.offset);
  return h;
}

SymbolicFormula extract_symbolic(Model& model, int max_degree, int probe_points) {
  SymbolicFormula f;
  f.max_degree = max_degree;
  if (auto why = symbolic_ineligibility(model)) {
    f.reason = *why;
    return f;
  }
  std::vector<Polynomial> polys;
  try {
    polys = model_polynomials(model);
  } catch (const ConfigError& e) {
    f.reason = e.what();
    return f;
  }
  f.eligible = true;
  std::tie(f.lo, f.hi) = input_range(model);
  const auto grid = probe_grid(f.lo, f.hi, probe_points);
  const Tensor pred = predict(model, column(grid));
  for (const auto& p : polys) f.composed_degree = std::max(f.composed_degree, p.degree());
  const int keep = max_degree < 0 ? f.composed_degree : std::min(max_degree, f.composed_degree);
  for (std::size_t o = 0; o < polys.size(); ++o) {
    std::vector<double> a(static_cast<std::size_t>(keep + 1));
    for (int k = 0; k <= keep; ++k) a[static_cast<std::size_t>(k)] = polys[o][k];
    const Polynomial truncated(a);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      f.residual = std::max(f.residual, std::abs(pred(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(o)) -
                                                 truncated(grid[g])));
    }
    f.coefficients.push_back(std::move(a));
  }
  return f;
}

// ---- attention ------------------------------------------------------------

std::vector<AttentionEntry> attention_report(const Model& model, const std::vector<std::string>& names) {
  if (!model.attention_logits) throw ConfigError("attention: the model has no attention gate");
  const Tensor& logits = *model.attention_logits;
  const Eigen::RowVectorXd alpha = attention_weights(logits);
  std::vector<AttentionEntry> out;
  for (Eigen::Index i = 0; i < alpha.size(); ++i) {
    const auto ii = static_cast<std::size_t>(i);
    out.push_back({static_cast<int>(i), ii < names.size() ? names[ii] : "x" + std::to_string(i + 1), alpha(i),
                   logits(0, i)});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const AttentionEntry& a, const AttentionEntry& b) { return a.alpha > b.alpha; });
  return out;
}

// ---- gradient field -------------------------------------------------------

Tensor input_gradients(Model& model, const Tensor& X) {
  if (model.config.n_outputs() != 1) throw ConfigError("input gradients need a single-output model");
  Tape tape;
  ForwardContext ctx(tape, Mode::Infer);
  ctx.trainable = false;
  Var x = tape.leaf(X, true);
  Var out = model_forward(ctx, model, x);
  Gradients g = tape.backward(reduce_sum(out));
  const Tensor* gx = g.find(x);
  return gx != nullptr ? *gx : Tensor::Zero(X.rows(), X.cols());
}

GradientField gradient_field(Model& model, const std::vector<double>& xs, const std::vector<double>& ys) {
  if (model.config.n_inputs() != 2) {
    throw ConfigError("gradfield: model has " + std::to_string(model.config.n_inputs()) +
                      " inputs; the field needs exactly 2");
  }
  if (xs.empty() || ys.empty()) throw ConfigError("gradfield: empty grid");
  const auto nx = static_cast<Eigen::Index>(xs.size());
  const auto ny = static_cast<Eigen::Index>(ys.size());
  Tensor X(nx * ny, 2);
  for (Eigen::Index i = 0; i < ny; ++i) {
    for (Eigen::Index j = 0; j < nx; ++j) {
      X(i * nx + j, 0) = xs[static_cast<std::size_t>(j)];
      X(i * nx + j, 1) = ys[static_cast<std::size_t>(i)];
    }
  }
  const Tensor pred = predict(model, X);
  const Tensor grad = input_gradients(model, X);
  GradientField f;
  f.xs = xs;
  f.ys = ys;
  f.Z.resize(ny, nx);
  f.dZdx.resize(ny, nx);
  f.dZdy.resize(ny, nx);
  f.magnitude.resize(ny, nx);
  for (Eigen::Index i = 0; i < ny; ++i) {
    for (Eigen::Index j = 0; j < nx; ++j) {
      const Eigen::Index r = i * nx + j;
      f.Z(i, j) = pred(r, 0);
      f.dZdx(i, j) = grad(r, 0);
      f.dZdy(i, j) = grad(r, 1);
      f.magnitude(i, j) = std::hypot(grad(r, 0), grad(r, 1));
    }
  }
  return f;
}

}  // namespace dfkan

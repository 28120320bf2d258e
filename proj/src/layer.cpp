#include "dfkan/layer.hpp"

#include <array>
#include <cmath>
#include <random>

namespace dfkan {

std::string to_string(FixedFn f) {
  switch (f) {
    case FixedFn::Relu: return "relu";
    case FixedFn::Tanh: return "tanh";
    case FixedFn::Sigmoid: return "sigmoid";
    case FixedFn::Identity: return "identity";
  }
  return "identity";
}

FixedFn fixed_fn_from_string(const std::string& s) {
  if (s == "relu") return FixedFn::Relu;
  if (s == "tanh") return FixedFn::Tanh;
  if (s == "sigmoid") return FixedFn::Sigmoid;
  if (s == "identity") return FixedFn::Identity;
  throw ConfigError("unknown fixed function '" + s + "' (relu|tanh|sigmoid|identity)");
}

std::string Strategy::tag() const {
  switch (kind) {
    case StrategyKind::None: return "none";
    case StrategyKind::Fixed: return "fixed:" + to_string(fixed);
    case StrategyKind::Global: return "global";
    case StrategyKind::PerDimension: return "per_input";
    case StrategyKind::PerConnection: return "per_neuron_input";
  }
  return "none";
}

Strategy Strategy::from_tag(const std::string& tag, const BasisSpec& basis) {
  if (tag == "none") return none();
  if (tag.rfind("fixed:", 0) == 0) return fixed_fn(fixed_fn_from_string(tag.substr(6)));
  if (tag == "global") return global(basis);
  if (tag == "per_input") return per_dimension(basis);
  if (tag == "per_neuron_input") return per_connection(basis);
  throw ConfigError("unknown strategy '" + tag + "' (none|fixed:<fn>|global|per_input|per_neuron_input)");
}

void LayerConfig::validate() const {
  if (n_in < 1 || n_out < 1) {
    throw ConfigError("layer dimensions must be >= 1, got " + std::to_string(n_in) + " -> " +
                      std::to_string(n_out));
  }
  if (output.kind == StrategyKind::PerConnection) {
    throw ConfigError("per-connection functions are only available as an input strategy");
  }
  if (input.learnable()) input.basis.validate();
  if (output.learnable()) output.basis.validate();
  reg.validate();
}

ParamBreakdown& ParamBreakdown::operator+=(const ParamBreakdown& o) {
  linear += o.linear;
  bias += o.bias;
  input_fn += o.input_fn;
  output_fn += o.output_fn;
  reg += o.reg;
  total += o.total;
  input_fn_nominal_m += o.input_fn_nominal_m;
  output_fn_nominal_m += o.output_fn_nominal_m;
  return *this;
}

namespace {

long long function_count(StrategyKind kind, long long n_in, long long n_out, bool input_side) {
  switch (kind) {
    case StrategyKind::Global: return 1;
    case StrategyKind::PerDimension: return input_side ? n_in : n_out;
    case StrategyKind::PerConnection: return n_in * n_out;
    default: return 0;
  }
}

BankLayout bank_layout(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::Global: return BankLayout::Global;
    case StrategyKind::PerDimension: return BankLayout::PerDimension;
    default: return BankLayout::PerConnection;
  }
}

}  // namespace

ParamBreakdown param_count(const LayerConfig& c) {
  ParamBreakdown p;
  const long long ni = c.n_in;
  const long long no = c.n_out;
  p.linear = ni * no;
  p.bias = c.has_bias ? no : 0;
  const long long fin = function_count(c.input.kind, ni, no, true);
  const long long fout = function_count(c.output.kind, ni, no, false);
  if (fin > 0) {
    p.input_fn = fin * c.input.basis.params_per_function();
    p.input_fn_nominal_m = fin * c.input.basis.order;
  }
  if (fout > 0) {
    p.output_fn = fout * c.output.basis.params_per_function();
    p.output_fn_nominal_m = fout * c.output.basis.order;
  }
  p.reg = 2LL * no * c.reg.batchnorm_positions();
  p.total = p.linear + p.bias + p.input_fn + p.output_fn + p.reg;
  return p;
}

std::vector<ParamRef> layer_parameters(LayerParams& params, const std::string& prefix) {
  std::vector<ParamRef> out;
  out.push_back({prefix + "W", &params.W});
  if (params.b.size() > 0) out.push_back({prefix + "b", &params.b});
  if (params.input_bank) out.push_back({prefix + "input_fn", &params.input_bank->params});
  if (params.output_bank) out.push_back({prefix + "output_fn", &params.output_bank->params});
  if (params.bn_pre) {
    out.push_back({prefix + "bn_pre.gamma", &params.bn_pre->gamma});
    out.push_back({prefix + "bn_pre.beta", &params.bn_pre->beta});
  }
  if (params.bn_post) {
    out.push_back({prefix + "bn_post.gamma", &params.bn_post->gamma});
    out.push_back({prefix + "bn_post.beta", &params.bn_post->beta});
  }
  return out;
}

std::vector<ParamRef> layer_buffers(LayerParams& params, const std::string& prefix) {
  std::vector<ParamRef> out;
  if (params.bn_pre) {
    out.push_back({prefix + "bn_pre.running_mean", &params.bn_pre->running_mean});
    out.push_back({prefix + "bn_pre.running_var", &params.bn_pre->running_var});
  }
  if (params.bn_post) {
    out.push_back({prefix + "bn_post.running_mean", &params.bn_post->running_mean});
    out.push_back({prefix + "bn_post.running_var", &params.bn_post->running_var});
  }
  return out;
}

LayerParams init_params(const LayerConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  LayerParams p;
  const double w_std = std::sqrt(2.0 / static_cast<double>(config.n_in));
  std::normal_distribution<double> normal(0.0, w_std);
  p.W.resize(config.n_out, config.n_in);
  for (Eigen::Index i = 0; i < p.W.size(); ++i) p.W.data()[i] = normal(rng);
  if (config.has_bias) p.b = Tensor::Zero(1, config.n_out);

  const double sigma0 = std::sqrt(2.0 / static_cast<double>(config.n_in + config.n_out));
  if (config.input.learnable()) {
    p.input_bank = make_bank(config.input.basis, bank_layout(config.input.kind), config.n_in, config.n_out,
                             sigma0, kCoefficientDecay, rng);
  }
  if (config.output.learnable()) {
    p.output_bank = make_bank(config.output.basis, bank_layout(config.output.kind), config.n_out, config.n_out,
                              sigma0, kCoefficientDecay, rng);
  }
  if (config.reg.use_batchnorm) {
    if (config.reg.active(RegSlot::Pre)) p.bn_pre = BatchNormState::make(config.n_out);
    if (config.reg.active(RegSlot::Post)) p.bn_post = BatchNormState::make(config.n_out);
  }
  return p;
}

Var ForwardContext::bind(Tensor& p) {
  Var v = tape.leaf(p, trainable);
  if (trainable) bound.emplace_back(&p, v);
  return v;
}

Var apply_fixed(const Var& x, FixedFn fn) {
  if (fn == FixedFn::Identity) return x;
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  Tensor d(xv.rows(), xv.cols());
  for (Eigen::Index i = 0; i < xv.size(); ++i) {
    const double v = xv.data()[i];
    double y = 0.0, dy = 0.0;
    switch (fn) {
      case FixedFn::Relu:
        y = v > 0.0 ? v : 0.0;
        dy = v > 0.0 ? 1.0 : 0.0;
        break;
      case FixedFn::Tanh:
        y = std::tanh(v);
        dy = 1.0 - y * y;
        break;
      case FixedFn::Sigmoid:
        y = 1.0 / (1.0 + std::exp(-v));
        dy = y * (1.0 - y);
        break;
      case FixedFn::Identity:
        break;
    }
    out.data()[i] = y;
    d.data()[i] = dy;
  }
  return x.tape()->record("fixed:" + to_string(fn), {x}, std::move(out), [d = std::move(d)](const Tensor& g) {
    return std::vector<Tensor>{Tensor(g.cwiseProduct(d))};
  });
}

namespace {

// Families whose basis values do not depend on the bank row, so one basis
// evaluation per input element serves every output neuron.
bool row_independent_basis(Family f) {
  return f != Family::GaussianRBF && f != Family::Sine && f != Family::Rational;
}

}  // namespace

Var per_connection_linear(const Var& x, const Var& W, const Var& bank, const BasisSpec& spec) {
  const Tensor& xv = x.value();
  const Tensor& wv = W.value();
  const Tensor& bv = bank.value();
  const int n_in = static_cast<int>(xv.cols());
  const int n_out = static_cast<int>(wv.rows());
  const int width = spec.params_per_function();
  const int m = spec.order;
  if (wv.cols() != n_in) {
    throw DimensionError("per_connection_linear: W " + shape_str(wv) + " does not match input " + shape_str(xv));
  }
  if (bv.rows() != static_cast<Eigen::Index>(n_in) * n_out || bv.cols() != width) {
    throw DimensionError("per_connection_linear: bank " + shape_str(bv) + " does not match " +
                         std::to_string(n_in) + "x" + std::to_string(n_out) + " connections");
  }
  const auto batch = xv.rows();
  const bool shared_basis = row_independent_basis(spec.family);
  auto row_of = [&](const Tensor& bank_v, int r) {
    return std::span<const double>(bank_v.data() + static_cast<std::ptrdiff_t>(r) * width,
                                   static_cast<std::size_t>(width));
  };

  Tensor out = Tensor::Zero(batch, n_out);
  std::array<double, 2 * kMaxBasisOrder> scratch{};
  std::array<double, kMaxBasisOrder> vals{};
  std::array<double, kMaxBasisOrder> ders{};
  std::vector<double> empty_row(static_cast<std::size_t>(width), 0.0);
  for (Eigen::Index s = 0; s < batch; ++s) {
    for (int i = 0; i < n_in; ++i) {
      const auto dm = map_domain(spec, xv(s, i));
      if (shared_basis) eval_basis(spec, empty_row, dm.u, vals, ders);
      for (int j = 0; j < n_out; ++j) {
        const auto row = row_of(bv, i * n_out + j);
        double phi = 0.0;
        if (shared_basis) {
          for (int k = 0; k < m; ++k) phi += row[static_cast<std::size_t>(k)] * vals[static_cast<std::size_t>(k)];
        } else {
          phi = eval_function(spec, row, dm.u, {}, scratch).value;
        }
        out(s, j) += wv(j, i) * phi;
      }
    }
  }

  Tape* t = x.tape();
  const int ix = x.id();
  const int iw = W.id();
  const int ib = bank.id();
  return t->record("per_connection_linear", {x, W, bank}, std::move(out), [t, ix, iw, ib, spec](const Tensor& g) {
    const Tensor& xv = t->value(ix);
    const Tensor& wv = t->value(iw);
    const Tensor& bv = t->value(ib);
    const int n_in = static_cast<int>(xv.cols());
    const int n_out = static_cast<int>(wv.rows());
    const int width = static_cast<int>(bv.cols());
    const int m = spec.order;
    const bool shared_basis = row_independent_basis(spec.family);
    Tensor dx = Tensor::Zero(xv.rows(), xv.cols());
    Tensor dw = Tensor::Zero(wv.rows(), wv.cols());
    Tensor db = Tensor::Zero(bv.rows(), bv.cols());
    std::array<double, 2 * kMaxBasisOrder> scratch{};
    std::array<double, kMaxBasisOrder> vals{};
    std::array<double, kMaxBasisOrder> ders{};
    std::vector<double> dp(static_cast<std::size_t>(width));
    std::vector<double> empty_row(static_cast<std::size_t>(width), 0.0);
    for (Eigen::Index s = 0; s < xv.rows(); ++s) {
      for (int i = 0; i < n_in; ++i) {
        const auto dm = map_domain(spec, xv(s, i));
        if (shared_basis) eval_basis(spec, empty_row, dm.u, vals, ders);
        double dxi = 0.0;
        for (int j = 0; j < n_out; ++j) {
          const double gs = g(s, j);
          if (gs == 0.0) continue;
          const int r = i * n_out + j;
          const double* row = bv.data() + static_cast<std::ptrdiff_t>(r) * width;
          double phi = 0.0, dphi = 0.0;
          if (shared_basis) {
            for (int k = 0; k < m; ++k) {
              phi += row[k] * vals[static_cast<std::size_t>(k)];
              dphi += row[k] * ders[static_cast<std::size_t>(k)];
            }
            const double coef = gs * wv(j, i);
            for (int k = 0; k < m; ++k) db(r, k) += coef * vals[static_cast<std::size_t>(k)];
          } else {
            const auto fv = eval_function(spec, std::span<const double>(row, static_cast<std::size_t>(width)), dm.u,
                                          dp, scratch);
            phi = fv.value;
            dphi = fv.du;
            const double coef = gs * wv(j, i);
            for (int k = 0; k < width; ++k) db(r, k) += coef * dp[static_cast<std::size_t>(k)];
          }
          dw(j, i) += gs * phi;
          dxi += gs * wv(j, i) * dphi;
        }
        dx(s, i) = dxi * dm.du_dx;
      }
    }
    return std::vector<Tensor>{std::move(dx), std::move(dw), std::move(db)};
  });
}

Var apply_input_transform(const Var& x, const Strategy& s, const std::optional<Var>& bank) {
  switch (s.kind) {
    case StrategyKind::None: return x;
    case StrategyKind::Fixed: return apply_fixed(x, s.fixed);
    case StrategyKind::Global: return batch_eval(s.basis, *bank, x, Assignment::Global);
    case StrategyKind::PerDimension: return batch_eval(s.basis, *bank, x, Assignment::PerColumn);
    case StrategyKind::PerConnection:
      throw ContractError("apply_input_transform: per-connection is fused into the linear map");
  }
  return x;
}

Var apply_output_transform(const Var& x, const Strategy& s, const std::optional<Var>& bank) {
  if (s.kind == StrategyKind::PerConnection) {
    throw ContractError("apply_output_transform: per-connection output strategy does not exist");
  }
  return apply_input_transform(x, s, bank);
}

Var layer_forward(ForwardContext& ctx, int layer_index, const LayerConfig& config, LayerParams& params,
                  const Var& x, LayerTrace* trace) {
  const Tensor& xv = x.value();
  if (xv.cols() != config.n_in) {
    throw DimensionError("layer " + std::to_string(layer_index) + ": expected " + std::to_string(config.n_in) +
                         " input columns, got " + std::to_string(xv.cols()));
  }
  if (!xv.allFinite()) throw NumericError("layer " + std::to_string(layer_index) + ": non-finite input");

  Var W = ctx.bind(params.W);
  std::optional<Var> in_bank, out_bank;
  if (params.input_bank) in_bank = ctx.bind(params.input_bank->params);
  if (params.output_bank) out_bank = ctx.bind(params.output_bank->params);

  Var s;
  if (config.input.kind == StrategyKind::PerConnection) {
    s = per_connection_linear(x, W, *in_bank, config.input.basis);
  } else {
    Var tx = apply_input_transform(x, config.input, in_bank);
    s = matmul(tx, transpose(W));
  }
  if (params.b.size() > 0) s = add_broadcast_row(s, ctx.bind(params.b));

  auto reg_at = [&](const Var& in, RegSlot slot) -> Var {
    if (!config.reg.active(slot)) return in;
    std::optional<BatchNormState>& bn = slot == RegSlot::Pre ? params.bn_pre : params.bn_post;
    std::optional<Var> gamma, beta;
    if (bn) {
      gamma = ctx.bind(bn->gamma);
      beta = ctx.bind(bn->beta);
    }
    std::mt19937_64 rng(mask_stream_seed(ctx.seed, layer_index, ctx.step, slot));
    const Tensor* pinned = ctx.pinned_mask ? ctx.pinned_mask(layer_index, slot) : nullptr;
    RegSeqArgs args{config.reg, bn ? &*bn : nullptr, gamma, beta, ctx.mode, &rng, pinned};
    return regseq(in, args);
  };

  Var a = reg_at(s, RegSlot::Pre);
  Var psi = apply_output_transform(a, config.output, out_bank);
  Var z = reg_at(psi, RegSlot::Post);
  if (trace != nullptr) *trace = {s, a, psi, z};
  return z;
}

}  // namespace dfkan

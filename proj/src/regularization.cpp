#include "dfkan/regularization.hpp"

#include <cmath>

namespace dfkan {

std::string to_string(RegPlacement p) {
  switch (p) {
    case RegPlacement::None: return "none";
    case RegPlacement::PreOnly: return "pre";
    case RegPlacement::PostOnly: return "post";
    case RegPlacement::Both: return "both";
  }
  return "none";
}

std::string to_string(RegOrder o) {
  return o == RegOrder::DropoutFirst ? "dropout_first" : "batchnorm_first";
}

RegPlacement reg_placement_from_string(const std::string& s) {
  if (s == "none") return RegPlacement::None;
  if (s == "pre") return RegPlacement::PreOnly;
  if (s == "post") return RegPlacement::PostOnly;
  if (s == "both") return RegPlacement::Both;
  throw ConfigError("unknown reg.placement '" + s + "' (none|pre|post|both)");
}

RegOrder reg_order_from_string(const std::string& s) {
  if (s == "dropout_first") return RegOrder::DropoutFirst;
  if (s == "batchnorm_first") return RegOrder::BatchNormFirst;
  throw ConfigError("unknown reg.order '" + s + "' (dropout_first|batchnorm_first)");
}

void RegConfig::validate() const {
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
    throw ConfigError("reg.dropout_p must lie in [0, 1), got " + std::to_string(dropout_p));
  }
}

BatchNormState BatchNormState::make(int n) {
  BatchNormState s;
  s.gamma = Tensor::Ones(1, n);
  s.beta = Tensor::Zero(1, n);
  s.running_mean = Tensor::Zero(1, n);
  s.running_var = Tensor::Ones(1, n);
  return s;
}

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t mask_stream_seed(std::uint64_t seed, int layer, std::uint64_t step, RegSlot slot) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(layer));
  h = splitmix64(h ^ step);
  return splitmix64(h ^ (slot == RegSlot::Pre ? 0x5052ULL : 0x504FULL));
}

Var dropout_with_mask(const Var& x, double p, const Tensor& mask) {
  require_same_shape(x.value(), mask, "dropout mask");
  const double keep = 1.0 / (1.0 - p);
  Tensor scaled = mask * keep;
  Tensor out = x.value().cwiseProduct(scaled);
  return x.tape()->record("dropout", {x}, std::move(out), [scaled = std::move(scaled)](const Tensor& g) {
    return std::vector<Tensor>{Tensor(g.cwiseProduct(scaled))};
  });
}

Var dropout(const Var& x, double p, Mode mode, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: p must lie in [0, 1)");
  if (mode == Mode::Infer || p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  Tensor mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? 1.0 : 0.0;
  return dropout_with_mask(x, p, mask);
}

Var batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, Mode mode) {
  const Tensor& xv = x.value();
  const auto n = xv.rows();
  const auto d = xv.cols();
  if (gamma.value().cols() != d || beta.value().cols() != d || state.width() != d) {
    throw DimensionError("batchnorm: parameter width does not match input " + shape_str(xv));
  }
  const double eps = state.eps;
  Tensor xhat(n, d);
  Eigen::RowVectorXd inv_std(d);
  if (mode == Mode::Train) {
    if (n < 2) throw DimensionError("batchnorm: train mode needs a batch of at least 2 rows");
    const Eigen::RowVectorXd mean = xv.colwise().mean();
    const Tensor centered = xv.rowwise() - mean;
    const Eigen::RowVectorXd var = centered.array().square().colwise().mean();
    inv_std = (var.array() + eps).rsqrt();
    xhat = centered.array().rowwise() * inv_std.array();
    const double mom = state.momentum;
    state.running_mean = (1.0 - mom) * state.running_mean + mom * Tensor(mean);
    state.running_var = (1.0 - mom) * state.running_var + mom * Tensor(var);
  } else {
    inv_std = (state.running_var.row(0).array() + eps).rsqrt();
    xhat = (xv.rowwise() - state.running_mean.row(0)).array().rowwise() * inv_std.array();
  }
  Tensor out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();

  Tape* t = x.tape();
  const int ig = gamma.id();
  return t->record(
      "batchnorm", {x, gamma, beta}, std::move(out),
      [t, ig, mode, xhat = std::move(xhat), inv_std](const Tensor& g) {
        const Eigen::RowVectorXd gam = t->value(ig).row(0);
        Tensor dgamma = g.cwiseProduct(xhat).colwise().sum();
        Tensor dbeta = g.colwise().sum();
        Tensor dx;
        if (mode == Mode::Train) {
          const double nn = static_cast<double>(g.rows());
          // dx = gamma * inv_std / N * (N g - sum(g) - xhat * sum(g * xhat))
          Tensor inner = (g * nn).rowwise() - dbeta.row(0);
          inner -= Tensor(xhat.array().rowwise() * dgamma.row(0).array());
          dx = inner.array().rowwise() * (gam.array() * inv_std.array() / nn);
        } else {
          dx = g.array().rowwise() * (gam.array() * inv_std.array());
        }
        return std::vector<Tensor>{std::move(dx), std::move(dgamma), std::move(dbeta)};
      });
}

Var regseq(const Var& x, const RegSeqArgs& args) {
  const RegConfig& cfg = args.config;
  auto apply_dropout = [&](const Var& in) -> Var {
    if (!cfg.use_dropout) return in;
    if (args.mode == Mode::Infer || cfg.dropout_p == 0.0) return in;
    if (args.pinned_mask != nullptr) return dropout_with_mask(in, cfg.dropout_p, *args.pinned_mask);
    if (args.rng == nullptr) throw ContractError("regseq: dropout needs an rng stream");
    return dropout(in, cfg.dropout_p, args.mode, *args.rng);
  };
  auto apply_bn = [&](const Var& in) -> Var {
    if (!cfg.use_batchnorm) return in;
    if (args.bn == nullptr || !args.gamma || !args.beta) throw ContractError("regseq: batch norm state missing");
    return batchnorm(in, *args.gamma, *args.beta, *args.bn, args.mode);
  };
  if (cfg.order == RegOrder::DropoutFirst) return apply_bn(apply_dropout(x));
  return apply_dropout(apply_bn(x));
}

}  // namespace dfkan

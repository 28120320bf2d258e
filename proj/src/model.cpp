#include "dfkan/model.hpp"

#include <cmath>
#include <string>

namespace dfkan {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed ^ (salt * 0x9E3779B97F4A7C15ULL);
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

void ModelConfig::validate() const {
  if (layers.empty()) throw ConfigError("model needs at least one layer");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    try {
      layers[l].validate();
    } catch (const ConfigError& e) {
      throw ConfigError("layer " + std::to_string(l) + ": " + e.what());
    }
    if (l > 0 && layers[l].n_in != layers[l - 1].n_out) {
      throw ConfigError("layer " + std::to_string(l - 1) + " outputs " + std::to_string(layers[l - 1].n_out) +
                        " but layer " + std::to_string(l) + " expects " + std::to_string(layers[l].n_in) +
                        " inputs");
    }
  }
}

Model build(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config = config;
  for (std::size_t l = 0; l < config.layers.size(); ++l) {
    m.layers.push_back(init_params(config.layers[l], derive_seed(config.seed, l + 1)));
  }
  if (config.attention) m.attention_logits = Tensor::Zero(1, config.n_inputs());
  return m;
}

std::vector<ParamRef> model_parameters(Model& model) {
  std::vector<ParamRef> out;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto refs = layer_parameters(model.layers[l], "layer" + std::to_string(l) + ".");
    out.insert(out.end(), refs.begin(), refs.end());
  }
  if (model.attention_logits) out.push_back({"attention", &*model.attention_logits});
  return out;
}

std::vector<ParamRef> model_buffers(Model& model) {
  std::vector<ParamRef> out;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto refs = layer_buffers(model.layers[l], "layer" + std::to_string(l) + ".");
    out.insert(out.end(), refs.begin(), refs.end());
  }
  return out;
}

long long enumerate_scalars(Model& model) {
  long long n = 0;
  for (const auto& p : model_parameters(model)) n += p.tensor->size();
  return n;
}

ParamBreakdown param_count(const ModelConfig& config) {
  ParamBreakdown total;
  for (const auto& l : config.layers) total += param_count(l);
  return total;
}

long long total_params(const ModelConfig& config) {
  return param_count(config).total + (config.attention ? config.n_inputs() : 0);
}

Eigen::RowVectorXd attention_weights(const Tensor& logits) {
  const Eigen::RowVectorXd z = logits.row(0);
  const double mx = z.maxCoeff();
  Eigen::RowVectorXd e = (z.array() - mx).exp();
  return e / e.sum();
}

Var attention_gate(const Var& x, const Var& logits) {
  const Tensor& xv = x.value();
  const auto n = xv.cols();
  if (logits.value().rows() != 1 || logits.value().cols() != n) {
    throw DimensionError("attention_gate: logits " + shape_str(logits.value()) + " do not match input " +
                         shape_str(xv));
  }
  const Eigen::RowVectorXd alpha = attention_weights(logits.value());
  const Eigen::RowVectorXd gate = alpha * static_cast<double>(n);
  Tensor out = xv.array().rowwise() * gate.array();
  Tape* t = x.tape();
  const int ix = x.id();
  return t->record("attention_gate", {x, logits}, std::move(out), [t, ix, alpha, gate](const Tensor& g) {
    const Tensor& xv = t->value(ix);
    Tensor dx = g.array().rowwise() * gate.array();
    const Eigen::RowVectorXd dgate = g.cwiseProduct(xv).colwise().sum();
    const double n = static_cast<double>(alpha.size());
    const double mean_term = dgate.dot(alpha);
    Tensor dtheta(1, alpha.size());
    dtheta.row(0) = n * alpha.array() * (dgate.array() - mean_term);
    return std::vector<Tensor>{std::move(dx), std::move(dtheta)};
  });
}

Var model_forward(ForwardContext& ctx, Model& model, const Var& x, ModelTrace* trace) {
  if (x.cols() != model.config.n_inputs()) {
    throw DimensionError("model expects " + std::to_string(model.config.n_inputs()) + " input columns, got " +
                         std::to_string(x.cols()));
  }
  Var h = x;
  if (model.input_norm.active()) h = affine_columns(h, model.input_norm.scale, model.input_norm.offset);
  if (model.attention_logits) h = attention_gate(h, ctx.bind(*model.attention_logits));
  if (trace != nullptr) {
    trace->gated_input = h;
    trace->layers.assign(model.layers.size(), {});
  }
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    h = layer_forward(ctx, static_cast<int>(l), model.config.layers[l], model.layers[l], h,
                      trace != nullptr ? &trace->layers[l] : nullptr);
  }
  if (model.output_norm.active()) h = affine_columns(h, model.output_norm.scale, model.output_norm.offset);
  return h;
}

Tensor predict(Model& model, const Tensor& X) {
  Tape tape;
  ForwardContext ctx(tape, Mode::Infer);
  ctx.trainable = false;
  Var x = tape.constant(X);
  return model_forward(ctx, model, x).value();
}

ModelConfig preset_mlp(const std::vector<int>& dims, FixedFn activation, std::uint64_t seed) {
  if (dims.size() < 2) throw ConfigError("preset_mlp: need at least two dims");
  ModelConfig c;
  c.seed = seed;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    LayerConfig lc;
    lc.n_in = dims[l];
    lc.n_out = dims[l + 1];
    lc.input = Strategy::none();
    lc.output = (l + 2 == dims.size()) ? Strategy::none() : Strategy::fixed_fn(activation);
    c.layers.push_back(lc);
  }
  return c;
}

ModelConfig preset_vanilla_kan(const std::vector<int>& dims, const BasisSpec& bspline, std::uint64_t seed) {
  if (dims.size() < 2) throw ConfigError("preset_vanilla_kan: need at least two dims");
  if (bspline.family != Family::BSpline) throw ConfigError("preset_vanilla_kan: basis must be bspline");
  ModelConfig c;
  c.seed = seed;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    LayerConfig lc;
    lc.n_in = dims[l];
    lc.n_out = dims[l + 1];
    lc.input = Strategy::per_connection(bspline);
    lc.output = Strategy::none();
    c.layers.push_back(lc);
  }
  return c;
}

ModelConfig preset_hybrid(const std::vector<int>& dims, int order, std::uint64_t seed) {
  if (dims.size() < 2) throw ConfigError("preset_hybrid: need at least two dims");
  ModelConfig c;
  c.seed = seed;
  const BasisSpec leg = BasisSpec::legendre(order);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    LayerConfig lc;
    lc.n_in = dims[l];
    lc.n_out = dims[l + 1];
    lc.input = l == 0 ? Strategy::per_connection(leg) : Strategy::global(leg);
    lc.output = Strategy::fixed_fn(FixedFn::Identity);
    c.layers.push_back(lc);
  }
  return c;
}

}  // namespace dfkan

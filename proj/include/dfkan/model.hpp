#pragma once

#include "dfkan/autodiff.hpp"
#include "dfkan/layer.hpp"
#include "dfkan/tensor.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace dfkan {

struct ModelConfig {
  std::vector<LayerConfig> layers;
  bool attention = false;
  std::uint64_t seed = 0;

  int n_inputs() const { return layers.empty() ? 0 : layers.front().n_in; }
  int n_outputs() const { return layers.empty() ? 0 : layers.back().n_out; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Fixed per-column affine maps applied before the first layer (inputs) and
// after the last layer (outputs). Empty rows mean identity.
struct Normalizer {
  Eigen::RowVectorXd scale;
  Eigen::RowVectorXd offset;

  bool active() const { return scale.size() > 0; }
};

struct Model {
  ModelConfig config;
  std::vector<LayerParams> layers;
  std::optional<Tensor> attention_logits;  // 1 x n_features
  Normalizer input_norm;
  Normalizer output_norm;
};

Model build(const ModelConfig& config);

// Learnable tensors in walk order: layers first, then attention logits.
std::vector<ParamRef> model_parameters(Model& model);
std::vector<ParamRef> model_buffers(Model& model);
long long enumerate_scalars(Model& model);
ParamBreakdown param_count(const ModelConfig& config);
long long total_params(const ModelConfig& config);

// alpha = softmax(logits).
Eigen::RowVectorXd attention_weights(const Tensor& logits);
// x * (n * softmax(logits)), columnwise.
Var attention_gate(const Var& x, const Var& logits);

struct ModelTrace {
  std::vector<LayerTrace> layers;
  Var gated_input;
};

Var model_forward(ForwardContext& ctx, Model& model, const Var& x, ModelTrace* trace = nullptr);
// Inference-mode predictions, no gradients.
Tensor predict(Model& model, const Tensor& X);

// Every hidden layer S0/S1(activation); the last layer is a linear head.
ModelConfig preset_mlp(const std::vector<int>& dims, FixedFn activation, std::uint64_t seed = 0);
// Every layer S4 with a B-spline basis and no output function. W and b are
// kept even though W can be absorbed into the spline coefficients.
ModelConfig preset_vanilla_kan(const std::vector<int>& dims, const BasisSpec& bspline, std::uint64_t seed = 0);
// Reconstructed hybrid: per-connection Legendre on the first layer, a shared
// (global) Legendre input function with identity output on later layers.
ModelConfig preset_hybrid(const std::vector<int>& dims, int order, std::uint64_t seed = 0);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace dfkan

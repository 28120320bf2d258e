#pragma once

#include "dfkan/autodiff.hpp"
#include "dfkan/basis.hpp"
#include "dfkan/regularization.hpp"
#include "dfkan/tensor.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace dfkan {

enum class StrategyKind { None, Fixed, Global, PerDimension, PerConnection };
enum class FixedFn { Relu, Tanh, Sigmoid, Identity };

std::string to_string(FixedFn f);
FixedFn fixed_fn_from_string(const std::string& s);

// One of S0..S4. `basis` is meaningful for the learnable kinds only.
struct Strategy {
  StrategyKind kind = StrategyKind::None;
  FixedFn fixed = FixedFn::Identity;
  BasisSpec basis;

  static Strategy none() { return {}; }
  static Strategy fixed_fn(FixedFn f) { return {StrategyKind::Fixed, f, {}}; }
  static Strategy global(BasisSpec b) { return {StrategyKind::Global, FixedFn::Identity, b}; }
  static Strategy per_dimension(BasisSpec b) { return {StrategyKind::PerDimension, FixedFn::Identity, b}; }
  static Strategy per_connection(BasisSpec b) { return {StrategyKind::PerConnection, FixedFn::Identity, b}; }

  bool learnable() const {
    return kind == StrategyKind::Global || kind == StrategyKind::PerDimension ||
           kind == StrategyKind::PerConnection;
  }
  // Config-file tag: none | fixed:<fn> | global | per_input | per_neuron_input.
  std::string tag() const;
  static Strategy from_tag(const std::string& tag, const BasisSpec& basis);

  bool operator==(const Strategy& o) const {
    if (kind != o.kind) return false;
    if (kind == StrategyKind::Fixed) return fixed == o.fixed;
    if (learnable()) return basis == o.basis;
    return true;
  }
};

struct LayerConfig {
  int n_in = 1;
  int n_out = 1;
  Strategy input;
  Strategy output;
  RegConfig reg;
  bool has_bias = true;

  void validate() const;
  bool operator==(const LayerConfig&) const = default;
};

struct LayerParams {
  Tensor W;  // n_out x n_in
  Tensor b;  // 1 x n_out (0 x 0 when the layer has no bias)
  std::optional<CoefficientBank> input_bank;
  std::optional<CoefficientBank> output_bank;
  std::optional<BatchNormState> bn_pre;
  std::optional<BatchNormState> bn_post;
};

// A learnable tensor reached by the parameter walk.
struct ParamRef {
  std::string group;
  Tensor* tensor;
};

// Same walk order used by the optimizer, the count oracle and checkpoints.
std::vector<ParamRef> layer_parameters(LayerParams& params, const std::string& prefix = "");
// Non-learnable state (batch-norm running statistics).
std::vector<ParamRef> layer_buffers(LayerParams& params, const std::string& prefix = "");

struct ParamBreakdown {
  long long linear = 0;
  long long bias = 0;
  long long input_fn = 0;
  long long output_fn = 0;
  long long reg = 0;
  long long total = 0;
  // Count with every function contributing exactly m scalars, as in the
  // closed-form layer formula; equals input_fn + output_fn for families
  // without extra per-function learnables.
  long long input_fn_nominal_m = 0;
  long long output_fn_nominal_m = 0;

  ParamBreakdown& operator+=(const ParamBreakdown& o);
};

ParamBreakdown param_count(const LayerConfig& config);

inline constexpr double kCoefficientDecay = 0.75;

LayerParams init_params(const LayerConfig& config, std::uint64_t seed);

// Per-forward-pass state shared by all layers of a model.
struct ForwardContext {
  Tape& tape;
  Mode mode = Mode::Infer;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  bool trainable = true;  // false: parameters enter the tape as constants
  std::vector<std::pair<Tensor*, Var>> bound;
  // Test hook: fixed dropout masks keyed by (layer index, slot).
  std::function<const Tensor*(int, RegSlot)> pinned_mask;

  ForwardContext(Tape& t, Mode m) : tape(t), mode(m) {}
  Var bind(Tensor& p);
};

Var apply_fixed(const Var& x, FixedFn fn);

// s_j = sum_i W_ji phi_ij(x_i), no bias. Bank rows ordered i * n_out + j.
Var per_connection_linear(const Var& x, const Var& W, const Var& bank, const BasisSpec& spec);

// Input strategies S0..S3 applied columnwise (S4 is fused into the linear map).
Var apply_input_transform(const Var& x, const Strategy& s, const std::optional<Var>& bank);
// Output strategies S0..S3 applied element-wise.
Var apply_output_transform(const Var& x, const Strategy& s, const std::optional<Var>& bank);

struct LayerTrace {
  Var s;  // linear output
  Var a;  // after pre-regularization
  Var psi;  // after output activation
  Var z;  // layer output
};

Var layer_forward(ForwardContext& ctx, int layer_index, const LayerConfig& config, LayerParams& params,
                  const Var& x, LayerTrace* trace = nullptr);

}  // namespace dfkan

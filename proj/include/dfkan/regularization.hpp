#pragma once

#include "dfkan/autodiff.hpp"
#include "dfkan/tensor.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>

namespace dfkan {

enum class Mode { Train, Infer };

enum class RegPlacement { None, PreOnly, PostOnly, Both };
enum class RegOrder { DropoutFirst, BatchNormFirst };
enum class RegSlot { Pre, Post };

std::string to_string(RegPlacement p);
std::string to_string(RegOrder o);
RegPlacement reg_placement_from_string(const std::string& s);
RegOrder reg_order_from_string(const std::string& s);

inline constexpr double kDefaultDropout = 0.1;

struct RegConfig {
  RegPlacement placement = RegPlacement::None;
  RegOrder order = RegOrder::DropoutFirst;
  double dropout_p = kDefaultDropout;
  bool use_dropout = false;
  bool use_batchnorm = false;

  void validate() const;
  bool active(RegSlot slot) const {
    if (!use_dropout && !use_batchnorm) return false;
    switch (placement) {
      case RegPlacement::None: return false;
      case RegPlacement::PreOnly: return slot == RegSlot::Pre;
      case RegPlacement::PostOnly: return slot == RegSlot::Post;
      case RegPlacement::Both: return true;
    }
    return false;
  }
  // Number of positions that carry a batch-norm state (0, 1 or 2).
  int batchnorm_positions() const {
    if (!use_batchnorm) return 0;
    return static_cast<int>(active(RegSlot::Pre)) + static_cast<int>(active(RegSlot::Post));
  }

  bool operator==(const RegConfig&) const = default;
};

struct BatchNormState {
  Tensor gamma;  // 1 x n, learnable
  Tensor beta;   // 1 x n, learnable
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  static BatchNormState make(int n);
  int width() const { return static_cast<int>(gamma.cols()); }
};

// Counter-based seed for a dropout mask stream.
std::uint64_t mask_stream_seed(std::uint64_t seed, int layer, std::uint64_t step, RegSlot slot);

// Inverted dropout. Infer mode and p == 0 are exact identities.
Var dropout(const Var& x, double p, Mode mode, std::mt19937_64& rng);
// Dropout with a caller-supplied 0/1 mask (same shape as x).
Var dropout_with_mask(const Var& x, double p, const Tensor& mask);

// Train mode normalizes with biased batch statistics and updates the running
// averages in `state`; infer mode uses the running averages. gamma and beta
// are tape variables holding state.gamma / state.beta.
Var batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, Mode mode);

// RegSeq: BN(Dropout(x)) or Dropout(BN(x)); disabled components are skipped.
// `bn` may be null when batch norm is off.
struct RegSeqArgs {
  const RegConfig& config;
  BatchNormState* bn;
  std::optional<Var> gamma;
  std::optional<Var> beta;
  Mode mode;
  std::mt19937_64* rng;
  const Tensor* pinned_mask = nullptr;
};
Var regseq(const Var& x, const RegSeqArgs& args);

}  // namespace dfkan

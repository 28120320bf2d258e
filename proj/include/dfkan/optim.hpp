#pragma once

#include "dfkan/datasets.hpp"
#include "dfkan/model.hpp"
#include "dfkan/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dfkan {

double mse(const Tensor& pred, const Tensor& target);
// 1 - SS_res / SS_tot. Throws NumericError for a constant target.
double r2(const Tensor& pred, const Tensor& target);
Var mse_loss(const Var& pred, const Var& target);

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  OptimizerConfig optimizer;
  int epochs = 3000;
  int batch_size = 64;  // 0 = full batch
  std::uint64_t seed = 0;
  double weight_decay = 0.0;
  double attention_l1 = 0.0;
  int patience = 0;  // 0 = no early stopping
  double clip_norm = 10.0;  // <= 0 disables clipping
  bool normalize_inputs = false;
  bool normalize_target = false;

  void validate() const;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long long t = 0;
};

// One optimizer update over matched (param, grad) lists. Returns the number
// of scalars written.
long long sgd_step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads, double lr);
long long adam_step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& state,
                    const OptimizerConfig& cfg);

struct Split {
  std::vector<long long> train;
  std::vector<long long> val;
  std::vector<long long> test;
};

// Seeded permutation cut into train/val/test fractions (must sum to 1).
Split make_split(long long n, std::uint64_t seed, double train_frac = 0.70, double val_frac = 0.15,
                 double test_frac = 0.15);
Tensor take_rows(const Tensor& t, const std::vector<long long>& idx);

struct EpochRecord {
  int epoch;
  double train_mse;
  double val_mse;
  double seconds;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  long long scalars_updated_per_step = 0;
};

// Fits min-max input scaling to [-1, 1] and z-score target scaling on the
// training rows (as configured) and stores them in the model.
void fit_normalizers(Model& model, const Tensor& X, const Tensor& y, const TrainConfig& cfg);

// Loss on one batch with gradient; exposed for gradient checks.
struct BatchLoss {
  double loss;
  std::vector<std::pair<Tensor*, Tensor>> grads;
};
BatchLoss loss_and_grads(Model& model, const Tensor& X, const Tensor& y, Mode mode, std::uint64_t seed,
                         std::uint64_t step, const TrainConfig& cfg);

TrainHistory train(Model& model, const Dataset& data, const Split& split, const TrainConfig& cfg);

struct Metrics {
  double mse;
  double r2;
};
Metrics evaluate(Model& model, const Tensor& X, const Tensor& y);

}  // namespace dfkan

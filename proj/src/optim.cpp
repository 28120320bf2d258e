#include "dfkan/optim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <limits>
#include <random>

namespace dfkan {

double mse(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse");
  if (pred.size() == 0) throw DimensionError("mse: empty tensors");
  return (pred - target).array().square().mean();
}

double r2(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "r2");
  const double mean = target.mean();
  const double ss_tot = (target.array() - mean).square().sum();
  if (!(ss_tot > 0.0)) throw NumericError("r2: target has zero variance");
  const double ss_res = (pred - target).array().square().sum();
  return 1.0 - ss_res / ss_tot;
}

Var mse_loss(const Var& pred, const Var& target) { return reduce_mean(square(sub(pred, target))); }

void TrainConfig::validate() const {
  if (!(optimizer.lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 0) throw ConfigError("train.batch_size must be >= 0");
  if (weight_decay < 0.0 || attention_l1 < 0.0) throw ConfigError("penalties must be >= 0");
}

long long sgd_step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads, double lr) {
  if (params.size() != grads.size()) throw DimensionError("sgd_step: param/grad count mismatch");
  long long n = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i], grads[i], "sgd_step");
    *params[i] -= lr * grads[i];
    n += params[i]->size();
  }
  return n;
}

long long adam_step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& state,
                    const OptimizerConfig& cfg) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: param/grad count mismatch");
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.push_back(Tensor::Zero(p->rows(), p->cols()));
      state.v.push_back(Tensor::Zero(p->rows(), p->cols()));
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: state does not match parameters");
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  long long n = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& g = grads[i];
    require_same_shape(*params[i], g, "adam_step");
    require_same_shape(state.m[i], g, "adam_step state");
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    auto mhat = state.m[i].array() / bc1;
    auto vhat = state.v[i].array() / bc2;
    params[i]->array() -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    n += params[i]->size();
  }
  return n;
}

Split make_split(long long n, std::uint64_t seed, double train_frac, double val_frac, double test_frac) {
  if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  std::vector<long long> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0LL);
  std::mt19937_64 rng(derive_seed(seed, 0x5B117ULL));
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_train = static_cast<long long>(std::llround(train_frac * static_cast<double>(n)));
  const auto n_val = static_cast<long long>(std::llround(val_frac * static_cast<double>(n)));
  Split s;
  s.train.assign(perm.begin(), perm.begin() + n_train);
  s.val.assign(perm.begin() + n_train, perm.begin() + std::min(n, n_train + n_val));
  s.test.assign(perm.begin() + std::min(n, n_train + n_val), perm.end());
  return s;
}

Tensor take_rows(const Tensor& t, const std::vector<long long>& idx) {
  Tensor out(static_cast<Eigen::Index>(idx.size()), t.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = t.row(idx[r]);
  return out;
}

void fit_normalizers(Model& model, const Tensor& X, const Tensor& y, const TrainConfig& cfg) {
  model.input_norm = {};
  model.output_norm = {};
  if (cfg.normalize_inputs) {
    const auto d = X.cols();
    Eigen::RowVectorXd sc(d), off(d);
    for (Eigen::Index c = 0; c < d; ++c) {
      const double lo = X.col(c).minCoeff();
      const double hi = X.col(c).maxCoeff();
      const double span = hi - lo;
      sc(c) = span > 0.0 ? 2.0 / span : 1.0;
      off(c) = span > 0.0 ? -1.0 - lo * sc(c) : -lo;
    }
    model.input_norm = {sc, off};
  }
  if (cfg.normalize_target) {
    const double mean = y.mean();
    double sd = std::sqrt((y.array() - mean).square().mean());
    if (!(sd > 0.0)) sd = 1.0;
    model.output_norm = {Eigen::RowVectorXd::Constant(1, sd), Eigen::RowVectorXd::Constant(1, mean)};
  }
}

namespace {

std::pair<double, double> output_scale(const Model& model) {
  if (!model.output_norm.active()) return {1.0, 0.0};
  return {model.output_norm.scale(0), model.output_norm.offset(0)};
}

}  // namespace

BatchLoss loss_and_grads(Model& model, const Tensor& X, const Tensor& y, Mode mode, std::uint64_t seed,
                         std::uint64_t step, const TrainConfig& cfg) {
  Tape tape;
  ForwardContext ctx(tape, mode);
  ctx.seed = seed;
  ctx.step = step;
  Var x = tape.constant(X);
  // The loss is measured in normalized target units when target scaling is on.
  Normalizer saved = model.output_norm;
  model.output_norm = {};
  Var pred = model_forward(ctx, model, x);
  model.output_norm = saved;
  const auto [sd, mean] = output_scale(model);
  Tensor yt = (y.array() - mean) / sd;
  Var loss = mse_loss(pred, tape.constant(yt));
  const double data_loss = loss.value()(0, 0);
  if (cfg.attention_l1 > 0.0 && model.attention_logits) {
    // The softmax weights always have unit L1 norm, so the sparsity pressure is
    // put on the first-layer weights instead; the gate then has to carry the
    // per-feature scale.
    Var w0;
    for (const auto& [ptr, v] : ctx.bound) {
      if (ptr == &model.layers.front().W) w0 = v;
    }
    loss = add(loss, scale(abs_sum(w0), cfg.attention_l1));
  }
  Gradients grads = tape.backward(loss);
  BatchLoss out;
  out.loss = data_loss;
  for (const auto& [ptr, v] : ctx.bound) {
    const Tensor* g = grads.find(v);
    out.grads.emplace_back(ptr, g ? *g : Tensor::Zero(ptr->rows(), ptr->cols()));
  }
  return out;
}

Metrics evaluate(Model& model, const Tensor& X, const Tensor& y) {
  const Tensor pred = predict(model, X);
  Metrics m{mse(pred, y), 0.0};
  const double mean = y.mean();
  const double ss_tot = (y.array() - mean).square().sum();
  m.r2 = ss_tot > 0.0 ? r2(pred, y) : std::nan("");
  return m;
}

TrainHistory train(Model& model, const Dataset& data, const Split& split, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  if (split.train.empty()) throw ConfigError("train split is empty");
  const Tensor Xtr = take_rows(data.X, split.train);
  const Tensor ytr = take_rows(data.y, split.train);
  const Tensor Xval = take_rows(data.X, split.val);
  const Tensor yval = take_rows(data.y, split.val);
  fit_normalizers(model, Xtr, ytr, cfg);
  const auto [sd, mean] = output_scale(model);
  const double loss_scale = sd * sd;

  bool uses_bn = false;
  for (const auto& l : model.config.layers) uses_bn = uses_bn || l.reg.use_batchnorm;

  const long long n = Xtr.rows();
  const long long bs = cfg.batch_size == 0 ? n : std::min<long long>(cfg.batch_size, n);
  std::vector<long long> order(static_cast<std::size_t>(n));
  AdamState adam;
  TrainHistory hist;
  std::optional<Model> best;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::uint64_t step = 0;
  const auto t0 = std::chrono::steady_clock::now();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0LL);
    if (bs < n) {
      std::mt19937_64 rng(derive_seed(cfg.seed, 0xE0C400000000ULL + static_cast<std::uint64_t>(epoch)));
      std::shuffle(order.begin(), order.end(), rng);
    }
    double loss_sum = 0.0;
    long long seen = 0;
    for (long long start = 0; start < n; start += bs) {
      long long end = std::min(n, start + bs);
      // A trailing single row would break batch statistics; fold it in.
      if (uses_bn && n - end == 1) end = n;
      std::vector<long long> idx(order.begin() + start, order.begin() + end);
      const Tensor Xb = take_rows(Xtr, idx);
      const Tensor yb = take_rows(ytr, idx);
      BatchLoss bl = loss_and_grads(model, Xb, yb, Mode::Train, cfg.seed, step, cfg);
      if (!std::isfinite(bl.loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
      }
      std::vector<Tensor*> params;
      std::vector<Tensor> grads;
      for (auto& [p, g] : bl.grads) {
        if (cfg.weight_decay > 0.0) g += cfg.weight_decay * *p;
        params.push_back(p);
        grads.push_back(std::move(g));
      }
      if (cfg.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& g : grads) sq += g.squaredNorm();
        const double norm = std::sqrt(sq);
        if (norm > cfg.clip_norm) {
          for (auto& g : grads) g *= cfg.clip_norm / norm;
        }
      }
      hist.scalars_updated_per_step = cfg.optimizer.kind == OptimizerKind::Adam
                                          ? adam_step(params, grads, adam, cfg.optimizer)
                                          : sgd_step(params, grads, cfg.optimizer.lr);
      loss_sum += bl.loss * static_cast<double>(end - start);
      seen += end - start;
      ++step;
      if (end == n) break;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mse = loss_sum / static_cast<double>(seen) * loss_scale;
    rec.val_mse = Xval.rows() > 0 ? mse(predict(model, Xval), yval) : std::nan("");
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!std::isfinite(rec.train_mse)) throw NumericError("non-finite loss at epoch " + std::to_string(epoch));
    hist.epochs.push_back(rec);

    if (cfg.patience > 0 && Xval.rows() > 0) {
      if (rec.val_mse < best_val) {
        best_val = rec.val_mse;
        best = model;
        hist.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        break;
      }
    }
  }
  if (best) model = std::move(*best);
  return hist;
}

}  // namespace dfkan

#include "dfkan/layer.hpp"
#include "dfkan/regularization.hpp"

#include <gtest/gtest.h>

#include "test_support.hpp"

namespace dfkan {
namespace {

using testing::random_tensor;

TEST(Dropout, ZeroProbabilityIsExactIdentity) {
  std::mt19937_64 rng(1), data(2);
  Tape tape;
  const Tensor x = random_tensor(5, 4, data);
  EXPECT_EQ(dropout(tape.leaf(x), 0.0, Mode::Train, rng).value(), x);
}

TEST(Dropout, InferModeIsIdentity) {
  std::mt19937_64 rng(1), data(2);
  Tape tape;
  const Tensor x = random_tensor(5, 4, data);
  EXPECT_EQ(dropout(tape.leaf(x), 0.7, Mode::Infer, rng).value(), x);
}

TEST(Dropout, InvertedScalingPreservesExpectation) {
  std::mt19937_64 rng(3);
  Tape tape;
  Var out = dropout(tape.leaf(Tensor::Ones(100000, 1)), 0.5, Mode::Train, rng);
  EXPECT_NEAR(out.value().mean(), 1.0, 0.01);
  for (Eigen::Index i = 0; i < out.value().size(); ++i) {
    const double v = out.value().data()[i];
    ASSERT_TRUE(v == 0.0 || v == 2.0);
  }
}

TEST(Dropout, GradientIsZeroWhereMaskIsZero) {
  std::mt19937_64 rng(5), data(6);
  Tape tape;
  Var x = tape.leaf(random_tensor(20, 6, data));
  Var y = dropout(x, 0.4, Mode::Train, rng);
  Gradients g = tape.backward(reduce_sum(y));
  for (Eigen::Index i = 0; i < y.value().size(); ++i) {
    if (y.value().data()[i] == 0.0) {
      EXPECT_EQ(g.at(x).data()[i], 0.0);
    } else {
      EXPECT_DOUBLE_EQ(g.at(x).data()[i], 1.0 / 0.6);
    }
  }
}

TEST(Dropout, RejectsProbabilityOne) {
  std::mt19937_64 rng(1);
  Tape tape;
  EXPECT_THROW(dropout(tape.leaf(Tensor::Ones(2, 2)), 1.0, Mode::Train, rng), ConfigError);
  RegConfig c;
  c.dropout_p = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

struct BnFixture {
  Tape tape;
  BatchNormState state;
  Var gamma, beta;
  explicit BnFixture(int n) : state(BatchNormState::make(n)) {
    gamma = tape.leaf(state.gamma);
    beta = tape.leaf(state.beta);
  }
};

TEST(BatchNorm, SymmetricTwoPointBatch) {
  BnFixture f(1);
  Tensor x(2, 1);
  x << 1.0, 3.0;
  Var y = batchnorm(f.tape.leaf(x), f.gamma, f.beta, f.state, Mode::Train);
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y.value()(0, 0), -expect, 1e-15);
  EXPECT_NEAR(y.value()(1, 0), expect, 1e-15);
  EXPECT_NEAR(expect, 0.999995, 1e-6);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  std::mt19937_64 rng(2);
  Tape tape;
  BatchNormState s = BatchNormState::make(3);
  Tensor beta(1, 3);
  beta << 0.5, -1.0, 2.0;
  Var y = batchnorm(tape.leaf(random_tensor(7, 3, rng)), tape.leaf(Tensor::Zero(1, 3)), tape.leaf(beta), s, Mode::Train);
  for (int i = 0; i < 7; ++i) EXPECT_EQ(y.value().row(i), beta.row(0));
}

TEST(BatchNorm, TrainModeStatistics) {
  std::mt19937_64 rng(4);
  BnFixture f(8);
  Var y = batchnorm(f.tape.leaf(random_tensor(64, 8, rng, -3.0, 5.0)), f.gamma, f.beta, f.state, Mode::Train);
  const Tensor& v = y.value();
  for (int c = 0; c < 8; ++c) {
    const double mean = v.col(c).mean();
    const double var = (v.col(c).array() - mean).square().mean();
    EXPECT_LE(std::abs(mean), 1e-9);
    EXPECT_LE(var, 1.0);
    EXPECT_GE(var, 1.0 - 1e-4);
  }
}

TEST(BatchNorm, RunningStatisticsUpdateOnlyInTrainMode) {
  std::mt19937_64 rng(4);
  BnFixture f(2);
  const Tensor x = random_tensor(10, 2, rng, 2.0, 4.0);
  batchnorm(f.tape.leaf(x), f.gamma, f.beta, f.state, Mode::Infer);
  EXPECT_TRUE(f.state.running_mean.isZero(0.0));
  EXPECT_TRUE(f.state.running_var.isOnes(0.0));
  batchnorm(f.tape.leaf(x), f.gamma, f.beta, f.state, Mode::Train);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::RowVectorXd var = (x.rowwise() - mean).array().square().colwise().mean();
  for (int c = 0; c < 2; ++c) {
    EXPECT_DOUBLE_EQ(f.state.running_mean(0, c), 0.1 * mean(c));
    EXPECT_DOUBLE_EQ(f.state.running_var(0, c), 0.9 + 0.1 * var(c));
    EXPECT_GE(f.state.running_var(0, c), 0.0);
  }
}

TEST(BatchNorm, InferModeUsesRunningStatistics) {
  BnFixture f(1);
  f.state.running_mean(0, 0) = 2.0;
  f.state.running_var(0, 0) = 4.0;
  Tensor x(1, 1);
  x << 4.0;
  Var y = batchnorm(f.tape.leaf(x), f.gamma, f.beta, f.state, Mode::Infer);
  EXPECT_DOUBLE_EQ(y.value()(0, 0), 2.0 / std::sqrt(4.0 + 1e-5));
}

TEST(BatchNorm, SingleRowTrainBatchIsRejected) {
  BnFixture f(3);
  EXPECT_THROW(batchnorm(f.tape.leaf(Tensor::Ones(1, 3)), f.gamma, f.beta, f.state, Mode::Train), DimensionError);
}

TEST(BatchNorm, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(8);
  for (Mode mode : {Mode::Train, Mode::Infer}) {
    for (int trial = 0; trial < 20; ++trial) {
      BatchNormState s = BatchNormState::make(3);
      s.running_mean = random_tensor(1, 3, rng);
      s.running_var = random_tensor(1, 3, rng, 0.5, 2.0);
      const Tensor w = random_tensor(5, 3, rng);
      const double err = testing::worst_gradient_error(
          [&](Tape& t, const std::vector<Var>& v) {
            BatchNormState local = s;
            return reduce_sum(mul(batchnorm(v[0], v[1], v[2], local, mode), t.constant(w)));
          },
          {random_tensor(5, 3, rng), random_tensor(1, 3, rng, 0.5, 1.5), random_tensor(1, 3, rng)});
      EXPECT_LE(err, 1e-5);
    }
  }
}

Tensor run_regseq(const RegConfig& cfg, const Tensor& x, const Tensor& mask, const Tensor& beta) {
  Tape tape;
  BatchNormState s = BatchNormState::make(static_cast<int>(x.cols()));
  s.beta = beta;
  std::mt19937_64 rng(0);
  RegSeqArgs args{cfg, &s, tape.leaf(s.gamma), tape.leaf(s.beta), Mode::Train, &rng, &mask};
  return regseq(tape.leaf(x), args).value();
}

TEST(RegSeq, BothFlagsOffIsIdentity) {
  std::mt19937_64 rng(1);
  RegConfig cfg;
  cfg.placement = RegPlacement::Both;
  const Tensor x = random_tensor(4, 2, rng);
  EXPECT_EQ(run_regseq(cfg, x, Tensor::Ones(4, 2), Tensor::Zero(1, 2)), x);
}

TEST(RegSeq, DropoutFirstWithZeroProbabilityIsBatchNormAlone) {
  std::mt19937_64 rng(2);
  RegConfig with;
  with.placement = RegPlacement::PreOnly;
  with.use_batchnorm = true;
  with.use_dropout = true;
  with.dropout_p = 0.0;
  RegConfig bn_only = with;
  bn_only.use_dropout = false;
  const Tensor x = random_tensor(4, 2, rng);
  Tensor mask = Tensor::Ones(4, 2);
  mask(0, 0) = 0.0;  // ignored at p = 0
  EXPECT_EQ(run_regseq(with, x, mask, Tensor::Zero(1, 2)), run_regseq(bn_only, x, mask, Tensor::Zero(1, 2)));
}

TEST(RegSeq, OrderingsDifferOnPinnedMask) {
  Tensor x(4, 2);
  x << 1.0, -2.0, 0.5, 3.0, -1.5, 0.25, 2.0, 1.0;
  Tensor mask(4, 2);
  mask << 1, 0, 0, 1, 1, 1, 0, 1;
  Tensor beta(1, 2);
  beta << 0.75, -0.5;
  RegConfig df;
  df.placement = RegPlacement::PreOnly;
  df.use_batchnorm = true;
  df.use_dropout = true;
  df.dropout_p = 0.5;
  RegConfig bf = df;
  bf.order = RegOrder::BatchNormFirst;
  const Tensor a = run_regseq(df, x, mask, beta);
  const Tensor b = run_regseq(bf, x, mask, beta);
  EXPECT_GT((a - b).cwiseAbs().maxCoeff(), 0.1);
  // Dropout applied last zeroes the masked entries, beta included.
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    if (mask.data()[i] == 0.0) EXPECT_EQ(b.data()[i], 0.0);
  }
}

TEST(RegSeq, BothPositionsKeepIndependentBatchNormStates) {
  std::mt19937_64 rng(9);
  LayerConfig c;
  c.n_in = 3;
  c.n_out = 4;
  c.output = Strategy::fixed_fn(FixedFn::Tanh);
  c.reg.placement = RegPlacement::Both;
  c.reg.use_batchnorm = true;
  LayerParams p = init_params(c, 2);
  ASSERT_TRUE(p.bn_pre && p.bn_post);
  EXPECT_NE(p.bn_pre->running_mean.data(), p.bn_post->running_mean.data());
  EXPECT_EQ(param_count(c).reg, 16);

  Tape tape;
  ForwardContext ctx(tape, Mode::Train);
  layer_forward(ctx, 0, c, p, tape.constant(random_tensor(16, 3, rng, 1.0, 3.0)));
  EXPECT_FALSE(p.bn_pre->running_mean.isApprox(p.bn_post->running_mean));
  const Tensor post_before = p.bn_post->running_mean;
  p.bn_pre->running_mean.setConstant(42.0);
  EXPECT_EQ(p.bn_post->running_mean, post_before);
}

TEST(RegSeq, MaskStreamsDifferBySlotAndStep) {
  EXPECT_NE(mask_stream_seed(1, 0, 0, RegSlot::Pre), mask_stream_seed(1, 0, 0, RegSlot::Post));
  EXPECT_NE(mask_stream_seed(1, 0, 0, RegSlot::Pre), mask_stream_seed(1, 0, 1, RegSlot::Pre));
  EXPECT_NE(mask_stream_seed(1, 0, 0, RegSlot::Pre), mask_stream_seed(1, 1, 0, RegSlot::Pre));
  EXPECT_EQ(mask_stream_seed(5, 2, 3, RegSlot::Post), mask_stream_seed(5, 2, 3, RegSlot::Post));
}

TEST(RegConfig, DefaultDropoutProbability) {
  EXPECT_EQ(RegConfig{}.dropout_p, 0.1);
}

TEST(RegConfig, BatchNormPositions) {
  RegConfig c;
  c.use_batchnorm = true;
  c.placement = RegPlacement::None;
  EXPECT_EQ(c.batchnorm_positions(), 0);
  c.placement = RegPlacement::PostOnly;
  EXPECT_EQ(c.batchnorm_positions(), 1);
  c.placement = RegPlacement::Both;
  EXPECT_EQ(c.batchnorm_positions(), 2);
  c.use_batchnorm = false;
  EXPECT_EQ(c.batchnorm_positions(), 0);
}

}  // namespace
}  // namespace dfkan

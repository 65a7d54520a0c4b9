#include <gtest/gtest.h>

#include <cmath>

#include "piecer/optim.hpp"
#include "piecer/rng.hpp"

using namespace piecer;

TEST(AdamW, ZeroGradientAppliesOnlyDecoupledDecay) {
  Parameter p("p", Tensor::row({2.0, -4.0, 0.5}));
  p.zero_grad();
  AdamW opt({&p}, AdamWConfig{0.9, 0.98, 1e-6, 0.01});
  const double lr = 0.1;
  opt.step(lr);
  EXPECT_DOUBLE_EQ(p.value[0], 2.0 * (1 - lr * 0.01));
  EXPECT_DOUBLE_EQ(p.value[1], -4.0 * (1 - lr * 0.01));
  EXPECT_EQ(opt.step_count(), 1u);
}

TEST(AdamW, NoDecayNoGradientLeavesParameter) {
  Parameter p("p", Tensor::row({2.0, -4.0}));
  p.zero_grad();
  AdamW opt({&p}, AdamWConfig{0.9, 0.98, 1e-6, 0.0});
  opt.step(0.5);
  EXPECT_EQ(p.value, Tensor::row({2.0, -4.0}));
}

TEST(AdamW, FirstStepMovesByLearningRateTimesSign) {
  // With bias correction, m_hat/sqrt(v_hat) = g/|g| on the first step.
  Parameter p("p", Tensor::row({1.0, 1.0}));
  p.grad = Tensor::row({0.3, -2.0});
  AdamW opt({&p}, AdamWConfig{0.9, 0.98, 0.0, 0.0});
  opt.step(0.01);
  EXPECT_NEAR(p.value[0], 0.99, 1e-12);
  EXPECT_NEAR(p.value[1], 1.01, 1e-12);
}

TEST(AdamW, MissingGradientIsContractError) {
  Parameter p("p", Tensor::row({1.0, 2.0}));
  p.grad = Tensor();
  AdamW opt({&p}, AdamWConfig{});
  EXPECT_THROW(opt.step(0.1), ContractError);
}

TEST(AdamW, IdenticalRunsAreBitwiseIdentical) {
  auto run = [] {
    Rng rng(99);
    Parameter p("p", Tensor::matrix(3, 3));
    for (double& x : p.value.values()) x = rng.normal();
    AdamW opt({&p}, AdamWConfig{});
    for (int s = 0; s < 50; ++s) {
      for (std::size_t k = 0; k < p.value.size(); ++k) p.grad[k] = std::sin(p.value[k] * 3.0) + rng.normal(0, 0.1);
      opt.step(1e-2);
    }
    return p.value;
  };
  EXPECT_EQ(run(), run());
}

TEST(Schedule, Endpoints) {
  EXPECT_EQ(lr_at(0, 100, 1e-3), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(6, 100, 1e-3), 1e-3);
  EXPECT_EQ(lr_at(100, 100, 1e-3), 0.0);
  EXPECT_THROW(lr_at(101, 100, 1e-3), ContractError);
  EXPECT_THROW(lr_at(0, 0, 1e-3), ContractError);
}

TEST(Schedule, PiecewiseLinearWithExactPeak) {
  for (std::size_t total : {1u, 2u, 7u, 17u, 100u, 1234u}) {
    const double peak = 0.37;
    double mx = 0;
    for (std::size_t s = 0; s <= total; ++s) {
      const double lr = lr_at(s, total, peak);
      EXPECT_GE(lr, 0.0);
      mx = std::max(mx, lr);
      if (s > 0) {
        // Continuity: neighbouring steps differ by at most one slope unit.
        const std::size_t warm = (6 * total + 99) / 100;
        const double slope = std::max(peak / warm, total > warm ? peak / (total - warm) : 0.0);
        EXPECT_LE(std::abs(lr - lr_at(s - 1, total, peak)), slope + 1e-15);
      }
    }
    EXPECT_EQ(mx, peak) << total;
  }
}

TEST(Ema, OneHandComputedUpdate) {
  Parameter p("p", Tensor::scalar(0.0));
  Ema ema({&p}, 0.9999);
  p.value = Tensor::scalar(1.0);
  ema.update({&p});
  EXPECT_NEAR(ema.shadow()[0].item(), 0.0001, 1e-15);
}

TEST(Ema, FixedPointAndZeroDecay) {
  Parameter p("p", Tensor::row({1.5, -2.0}));
  Ema ema({&p}, 0.9);
  ema.update({&p});
  EXPECT_EQ(ema.shadow()[0], p.value);
  Ema copy({&p}, 0.0);
  p.value = Tensor::row({7.0, 8.0});
  copy.update({&p});
  EXPECT_EQ(copy.shadow()[0], p.value);
}

TEST(Ema, ShapeDriftIsContractError) {
  Parameter p("p", Tensor::row({1.0, 2.0}));
  Ema ema({&p}, 0.5);
  p.value = Tensor::row({1.0, 2.0, 3.0});
  EXPECT_THROW(ema.update({&p}), ContractError);
  EXPECT_THROW(Ema({&p}, 1.0), ContractError);
}

TEST(Ema, SwapTwiceRestores) {
  Parameter p("p", Tensor::scalar(1.0));
  Ema ema({&p}, 0.5);
  p.value = Tensor::scalar(3.0);
  ema.update({&p});
  ema.swap({&p});
  EXPECT_EQ(p.value.item(), 2.0);
  ema.swap({&p});
  EXPECT_EQ(p.value.item(), 3.0);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "imix/augment.hpp"
#include "imix/errors.hpp"
#include "support.hpp"

using namespace imix;
using testing_support::randn;

TEST(MaskNoise, Endpoints) {
  Rng rng(1);
  const Matrix x = randn(rng, 5, 4);
  EXPECT_EQ(mask_noise(rng, x, 0.0), x);
  EXPECT_EQ(max_abs(mask_noise(rng, x, 1.0)), 0.0);
  EXPECT_THROW(mask_noise(rng, x, 1.5), ConfigError);
}

TEST(MaskNoise, ZeroedFraction) {
  Rng rng(2);
  const Matrix x(1000, 100, 1.0);
  const Matrix y = mask_noise(rng, x, 0.2);
  const double zeros = static_cast<double>(std::count(y.data(), y.data() + y.size(), 0.0));
  EXPECT_NEAR(zeros / static_cast<double>(y.size()), 0.2, 0.01);
}

TEST(Mixup, Values) {
  const std::vector<double> a = {2, 0}, b = {0, 2};
  EXPECT_EQ(mixup_op(a, b, 1.0), a);
  EXPECT_EQ(mixup_op(a, b, 0.5), (std::vector<double>{1, 1}));
  const std::vector<double> x = {0.3, -1.7, 5.0};
  for (double l : {0.0, 0.25, 0.7, 1.0}) {
    const auto y = mixup_op(x, x, l);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-15);
  }
  EXPECT_THROW(mixup_op(a, x, 0.5), ShapeError);
}

TEST(Mixup, OutputWithinEnvelope) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const Matrix p = randn(rng, 2, 6);
    const double l = rng.uniform();
    const auto y = mixup_op(p.row(0), p.row(1), l);
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_GE(y[i], std::min(p(0, i), p(1, i)) - 1e-15);
      EXPECT_LE(y[i], std::max(p(0, i), p(1, i)) + 1e-15);
    }
  }
}

TEST(Cutmix, Endpoints) {
  Rng rng(4);
  const SpatialShape grid{{4, 4}};
  const Matrix p = randn(rng, 2, 16);
  const auto keep = cutmix_op(rng, p.row(0), p.row(1), 1.0, grid);
  EXPECT_TRUE(std::equal(keep.mixed.begin(), keep.mixed.end(), p.row(0).begin()));
  EXPECT_EQ(keep.realized_lambda, 1.0);
  const auto swap = cutmix_op(rng, p.row(0), p.row(1), 0.0, grid);
  EXPECT_TRUE(std::equal(swap.mixed.begin(), swap.mixed.end(), p.row(1).begin()));
  EXPECT_EQ(swap.realized_lambda, 0.0);
}

TEST(Cutmix, QuarterRegionOnGrid) {
  Rng rng(5);
  const SpatialShape grid{{4, 4}};
  const std::vector<double> a(16, 1.0), b(16, 2.0);
  for (int t = 0; t < 50; ++t) {
    const auto r = cutmix_op(rng, a, b, 0.75, grid);
    EXPECT_EQ(std::count(r.from_j.begin(), r.from_j.end(), 1), 4);
    EXPECT_EQ(r.realized_lambda, 0.75);
    // the pasted cells form a contiguous rectangle
    std::size_t r0 = 4, r1 = 0, c0 = 4, c1 = 0;
    for (std::size_t i = 0; i < 16; ++i) {
      if (!r.from_j[i]) continue;
      r0 = std::min(r0, i / 4);
      r1 = std::max(r1, i / 4);
      c0 = std::min(c0, i % 4);
      c1 = std::max(c1, i % 4);
    }
    EXPECT_EQ((r1 - r0 + 1) * (c1 - c0 + 1), 4u);
  }
}

TEST(Cutmix, EntriesComeFromExactlyOneParent) {
  Rng rng(6);
  for (const SpatialShape& s : {SpatialShape{{12}}, SpatialShape{{3, 5}}, SpatialShape{{6, 6}}}) {
    const std::size_t cells = s.cells();
    for (int t = 0; t < 50; ++t) {
      const Matrix p = randn(rng, 2, cells);
      const double l = rng.uniform();
      const auto r = cutmix_op(rng, p.row(0), p.row(1), l, s);
      std::size_t taken = 0;
      for (std::size_t i = 0; i < cells; ++i) {
        EXPECT_EQ(r.mixed[i], r.from_j[i] ? p(1, i) : p(0, i));
        taken += r.from_j[i];
      }
      EXPECT_DOUBLE_EQ(r.realized_lambda, 1.0 - static_cast<double>(taken) / static_cast<double>(cells));
      // pasted area is the achievable rectangle area closest to the target
      const double target = std::round((1 - l) * static_cast<double>(cells));
      const std::size_t rows = s.dims.size() == 2 ? s.dims[0] : 1;
      double best = target;
      for (std::size_t h = 1; h <= rows; ++h)
        for (std::size_t w = 1; w <= s.dims.back(); ++w)
          best = std::min(best, std::abs(static_cast<double>(h * w) - target));
      EXPECT_EQ(std::abs(static_cast<double>(taken) - target), best);
    }
  }
}

TEST(Cutmix, NonSpatialIsConfigError) {
  Rng rng(7);
  const std::vector<double> a(4, 0.0);
  EXPECT_THROW(cutmix_op(rng, a, a, 0.5, SpatialShape{}), ConfigError);
  MixSpec spec;
  spec.op = MixOperator::cutmix;
  EXPECT_THROW(spec.validate(SpatialShape{}), ConfigError);
  EXPECT_NO_THROW(spec.validate(SpatialShape{{2, 2}}));
  const SpatialShape bad{{2, 3}};
  EXPECT_THROW(bad.validate(5), ConfigError);
}

TEST(Cutmix, RealizedLambdaFlowsIntoPlan) {
  Rng rng(8);
  const SpatialShape grid{{4, 4}};
  const Matrix x = randn(rng, 6, 16);
  MixSpec spec;
  spec.op = MixOperator::cutmix;
  spec.granularity = Granularity::per_sample;
  MixPlan plan = sample_plan(rng, 6, spec);
  const Matrix mixed = apply_mix(rng, x, plan, spec, grid);
  for (std::size_t i = 0; i < 6; ++i) {
    std::size_t kept = 0;
    for (std::size_t c = 0; c < 16; ++c) kept += mixed(i, c) == x(i, c) && x(i, c) != x(plan.perm[i], c);
    if (plan.perm[i] != i) {
      EXPECT_DOUBLE_EQ(plan.lambda[i], static_cast<double>(kept) / 16.0);
    }
  }
}

TEST(InputMix, CoefficientProperties) {
  Rng rng(9);
  const std::vector<double> p = {1, 0, 0}, a = {0, 1, 0}, b = {0, 0, 1};
  for (int t = 0; t < 1000; ++t) {
    const auto r = inputmix(rng, p, a, b);
    EXPECT_NEAR(r.coefficients[0] + r.coefficients[1] + r.coefficients[2], 1.0, 1e-15);
    EXPECT_GE(r.coefficients[0], 0.5);
    EXPECT_LE(r.coefficients[0], 1.0);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(r.mixed[i], r.coefficients[i], 1e-15);
  }
  EXPECT_EQ(inputmix_with(p, a, b, {1, 0, 0}), p);
}

TEST(InputMix, BatchKeepsShape) {
  Rng rng(10);
  const Matrix x = randn(rng, 7, 3);
  const Matrix y = inputmix_batch(rng, x);
  EXPECT_EQ(y.rows(), 7u);
  EXPECT_EQ(y.cols(), 3u);
}

TEST(Views, EmptyPolicyCopies) {
  Rng rng(11);
  const Matrix x = randn(rng, 7, 4);
  const ViewBatch v = make_views(rng, x, AugmentPolicy{});
  EXPECT_EQ(v.view1, x);
  EXPECT_EQ(v.view2, x);
  EXPECT_EQ(v.labels, Matrix::identity(7));
}

TEST(Views, MasksAreIndependent) {
  Rng rng(12);
  const Matrix x(20, 50, 1.0);
  AugmentPolicy policy;
  policy.mask_prob = 0.2;
  const ViewBatch v = make_views(rng, x, policy);
  EXPECT_FALSE(v.view1 == v.view2);
}

TEST(Views, SeededDeterminism) {
  AugmentPolicy policy;
  policy.mask_prob = 0.3;
  policy.noise_sigma = 0.1;
  policy.inputmix = true;
  Rng data(13);
  const Matrix x = randn(data, 9, 5);
  Rng a(99), b(99);
  const ViewBatch va = make_views(a, x, policy);
  const ViewBatch vb = make_views(b, x, policy);
  EXPECT_EQ(va.view1, vb.view1);
  EXPECT_EQ(va.view2, vb.view2);
}

TEST(Plan, PerBatchAndPerSample) {
  Rng rng(14);
  MixSpec spec;
  const MixPlan b = sample_plan(rng, 8, spec);
  EXPECT_NO_THROW(b.validate());
  for (double l : b.lambda) EXPECT_EQ(l, b.lambda[0]);
  spec.granularity = Granularity::per_sample;
  const MixPlan s = sample_plan(rng, 8, spec);
  EXPECT_NO_THROW(s.validate());
  EXPECT_NE(s.lambda[0], s.lambda[1]);
  spec.alpha = 0.0;
  EXPECT_THROW(spec.validate(SpatialShape{}), ConfigError);
}

TEST(Plan, MixupRowsFollowPlan) {
  Rng rng(15);
  const Matrix x = randn(rng, 5, 3);
  MixSpec spec;
  spec.granularity = Granularity::per_sample;
  MixPlan plan = sample_plan(rng, 5, spec);
  const Matrix y = apply_mix(rng, x, plan, spec, SpatialShape{});
  for (std::size_t i = 0; i < 5; ++i) {
    const auto want = mixup_op(x.row(i), x.row(plan.perm[i]), plan.lambda[i]);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(y(i, c), want[c]);
  }
}

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "imix/errors.hpp"
#include "imix/linalg.hpp"
#include "imix/losses.hpp"
#include "imix/memory_bank.hpp"
#include "oracle.hpp"
#include "support.hpp"

using namespace imix;
using oracle::rows_of;
using testing_support::fd_grad;
using testing_support::randn;
using testing_support::rel_err;

namespace {

std::vector<int> classes(Rng& rng, std::size_t n, std::size_t c) {
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i < c ? i : rng.uniform_index(c));
  return y;
}

std::vector<std::size_t> random_perm(Rng& rng, std::size_t n) {
  return rng.permutation(n);
}

Matrix rows(const Matrix& m, std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> idx(hi - lo);
  std::iota(idx.begin(), idx.end(), lo);
  return m.gather_rows(idx);
}

Matrix normalized(const Matrix& m) { return normalize_rows(m).unit; }

}  // namespace

TEST(SupCe, ClosedForms) {
  EXPECT_NEAR(sup_ce(Matrix::from_rows({{0.0}}), Matrix::from_rows({{1.0, 1.0}}),
                     Matrix::from_rows({{1.0, 0.0}})).value,
              std::log(2.0), 1e-15);
  EXPECT_EQ(sup_ce(Matrix::from_rows({{0.3}}), Matrix::from_rows({{2.0}}), Matrix::from_rows({{1.0}})).value,
            0.0);
  EXPECT_NEAR(sup_ce(Matrix::from_rows({{1.0}}), Matrix::from_rows({{2.0, 0.0}}),
                     Matrix::from_rows({{1.0, 0.0}})).value,
              0.126928, 1e-6);
}

TEST(SupCe, InvalidTargetsAreLabelErrors) {
  const Matrix f = Matrix::from_rows({{1.0}});
  const Matrix w = Matrix::from_rows({{1.0, 0.0}});
  EXPECT_THROW(sup_ce(f, w, Matrix::from_rows({{1.2, -0.2}})), LabelError);
  EXPECT_THROW(sup_ce(f, w, Matrix::from_rows({{0.5, 0.4}})), LabelError);
  EXPECT_NO_THROW(sup_ce(f, w, Matrix::from_rows({{0.5, 0.5 + 5e-10}})));
}

TEST(SupCe, MatchesOracleAndGradients) {
  Rng rng(1);
  Matrix f = randn(rng, 4, 3);
  Matrix w = randn(rng, 3, 5);
  Matrix y(4, 5);
  for (std::size_t i = 0; i < 4; ++i) {
    y(i, i) = 0.3;
    y(i, 4) = 0.7;
  }
  const LossOutput out = sup_ce(f, w, y);
  EXPECT_NEAR(out.value, oracle::sup_ce(rows_of(f), rows_of(w), rows_of(y)), 1e-12);
  auto value = [&] { return sup_ce(f, w, y).value; };
  EXPECT_LT(rel_err(out.grad_anchor, fd_grad(f, value)), 1e-6);
  ASSERT_TRUE(out.grad_keys.has_value());
  EXPECT_LT(rel_err(*out.grad_keys, fd_grad(w, value)), 1e-6);
}

TEST(MixupSup, ReductionsAndSymmetricCase) {
  Rng rng(2);
  const Matrix xi = randn(rng, 1, 3), xj = randn(rng, 1, 3), w = randn(rng, 3, 2);
  const Matrix yi = Matrix::from_rows({{1, 0}}), yj = Matrix::from_rows({{0, 1}});
  EXPECT_EQ(mixup_sup(xi, yi, xj, yj, 1.0, w).value, sup_ce(xi, w, yi).value);
  EXPECT_EQ(mixup_sup(xi, yi, xj, yj, 0.0, w).value, sup_ce(xj, w, yj).value);
  const Matrix e1 = Matrix::from_rows({{1, 0}}), e2 = Matrix::from_rows({{0, 1}});
  EXPECT_NEAR(mixup_sup(e1, yi, e2, yj, 0.5, Matrix::identity(2)).value, std::log(2.0), 1e-15);
  EXPECT_THROW(mixup_sup(xi, yi, xj, yj, 1.5, w), ConfigError);
}

TEST(Npair, ClosedForms) {
  EXPECT_EQ(npair(Matrix::from_rows({{1, 2}}), Matrix::from_rows({{3, -1}}), identity_labels(1), 0.1).value,
            0.0);
  const Matrix e = Matrix::identity(2);
  EXPECT_NEAR(npair(e, e, identity_labels(2), 1.0).value, std::log1p(std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(npair(e, e, identity_labels(2), 1.0).value, 0.313262, 1e-6);
}

TEST(Npair, ZeroNormRowIsNumericError) {
  EXPECT_THROW(npair(Matrix::from_rows({{0, 0}}), Matrix::from_rows({{1, 0}}), identity_labels(1), 1.0),
               NumericError);
}

TEST(Npair, BadLabelsAreLabelErrors) {
  const Matrix e = Matrix::identity(2);
  EXPECT_THROW(npair(e, e, Matrix::from_rows({{0.5, 0.4}, {0, 1}}), 1.0), LabelError);
  EXPECT_THROW(npair(e, e, Matrix::from_rows({{1.5, -0.5}, {0, 1}}), 1.0), LabelError);
  EXPECT_THROW(npair(e, e, identity_labels(3), 1.0), ShapeError);
  EXPECT_THROW(npair(e, e, identity_labels(2), 0.0), ConfigError);
}

TEST(Npair, OracleAndGradients) {
  Rng rng(3);
  Matrix a = randn(rng, 3, 4), k = randn(rng, 3, 4);
  const LossOutput out = npair(a, k, identity_labels(3), 0.2);
  EXPECT_NEAR(out.value, oracle::npair(rows_of(a), rows_of(k), rows_of(identity_labels(3)), 0.2), 1e-10);
  auto value = [&] { return npair(a, k, identity_labels(3), 0.2).value; };
  EXPECT_LT(rel_err(out.grad_anchor, fd_grad(a, value)), 1e-4);
  ASSERT_TRUE(out.grad_keys.has_value());
  EXPECT_LT(rel_err(*out.grad_keys, fd_grad(k, value)), 1e-4);
}

TEST(Simclr, ClosedFormsAndOracle) {
  Rng rng(4);
  EXPECT_EQ(simclr(randn(rng, 2, 3), simclr_labels(1), 0.5).value, 0.0);
  Matrix f = randn(rng, 4, 4);
  const LossOutput out = simclr(f, simclr_labels(2), 0.5);
  EXPECT_NEAR(out.value, oracle::simclr(rows_of(f), 0.5), 1e-10);
  EXPECT_FALSE(out.grad_keys.has_value());
  auto value = [&] { return simclr(f, simclr_labels(2), 0.5).value; };
  EXPECT_LT(rel_err(out.grad_anchor, fd_grad(f, value)), 1e-4);
}

TEST(Simclr, SelfCandidateLabelRejected) {
  Matrix v = simclr_labels(2);
  v(0, 2) = 0.5;
  v(0, 0) = 0.5;
  Rng rng(5);
  EXPECT_THROW(simclr(randn(rng, 4, 3), v, 0.5), LabelError);
}

TEST(Moco, ReductionsAndOracle) {
  Rng rng(6);
  Matrix a = randn(rng, 2, 3), k = normalized(randn(rng, 2, 3));
  const MemoryBank empty(Matrix(0, 3));
  EXPECT_NEAR(moco(a, k, empty, moco_labels(2, 0), 0.2).value,
              npair(a, k, identity_labels(2), 0.2).value, 1e-15);
  EXPECT_EQ(moco(randn(rng, 1, 3), rows(k, 0, 1), empty, moco_labels(1, 0), 0.2).value, 0.0);
  const MemoryBank bank(normalized(randn(rng, 3, 3)));
  const LossOutput out = moco(a, k, bank, moco_labels(2, 3), 0.2);
  EXPECT_NEAR(out.value,
              oracle::imix_moco(rows_of(a), rows_of(k), rows_of(bank.ordered()), oracle::iota(2), {1, 1}, 0.2),
              1e-10);
  EXPECT_FALSE(out.grad_keys.has_value());
  auto value = [&] { return moco(a, k, bank, moco_labels(2, 3), 0.2).value; };
  EXPECT_LT(rel_err(out.grad_anchor, fd_grad(a, value)), 1e-4);
}

TEST(Moco, BankLabelMassRejected) {
  Rng rng(7);
  const MemoryBank bank(normalized(randn(rng, 2, 3)));
  Matrix v = moco_labels(2, 2);
  v(0, 0) = 0.5;
  v(0, 2) = 0.5;
  EXPECT_THROW(moco(randn(rng, 2, 3), normalized(randn(rng, 2, 3)), bank, v, 0.2), LabelError);
}

TEST(Moco, StopGradientOnKeysAndBank) {
  Rng rng(8);
  Matrix a = randn(rng, 3, 4), k = normalized(randn(rng, 3, 4));
  const MemoryBank bank(normalized(randn(rng, 4, 4)));
  const LossOutput base = moco(a, k, bank, moco_labels(3, 4), 0.3);
  const MemoryBank other(normalized(randn(rng, 4, 4)));
  const LossOutput moved = moco(a, k, other, moco_labels(3, 4), 0.3);
  EXPECT_NE(base.value, moved.value);
  EXPECT_FALSE(moved.grad_keys.has_value());
  EXPECT_EQ(moved.grad_anchor.rows(), a.rows());
}

TEST(Byol, ClosedForms) {
  const Matrix t = Matrix::from_rows({{1, 0}});
  EXPECT_NEAR(byol(Matrix::from_rows({{3, 0}}), t, identity_labels(1)).value, 0.0, 1e-15);
  EXPECT_NEAR(byol(Matrix::from_rows({{-2, 0}}), t, identity_labels(1)).value, 4.0, 1e-15);
  EXPECT_NEAR(byol(Matrix::from_rows({{0, 5}}), t, identity_labels(1)).value, 2.0, 1e-15);
  EXPECT_THROW(byol(Matrix::from_rows({{0, 0}}), t, identity_labels(1)), NumericError);
}

TEST(Byol, MixedBisectorMatchesOracle) {
  const Matrix targets = Matrix::identity(2);
  const Matrix p = Matrix::from_rows({{1, 1}, {1, 1}});
  const Matrix v = Matrix::from_rows({{0.5, 0.5}, {0.5, 0.5}});
  const double want = oracle::imix_byol(rows_of(p), rows_of(targets), {1, 0}, {0.5, 0.5});
  EXPECT_NEAR(byol(p, targets, v).value, want, 1e-10);
  // |g - t|^2 with |t| = sqrt(1/2), aligned: (1 - sqrt(1/2))^2
  EXPECT_NEAR(want, std::pow(1.0 - std::sqrt(0.5), 2), 1e-12);
}

TEST(Byol, GradientsAndStopGradient) {
  Rng rng(9);
  Matrix p = randn(rng, 3, 4);
  const Matrix t = randn(rng, 3, 4);
  const LossOutput out = byol(p, t, identity_labels(3));
  EXPECT_FALSE(out.grad_keys.has_value());
  auto value = [&] { return byol(p, t, identity_labels(3)).value; };
  EXPECT_LT(rel_err(out.grad_anchor, fd_grad(p, value)), 1e-4);
}

TEST(Supclr, AllSameClassReducesToUniformCe) {
  Rng rng(10);
  const Matrix f = randn(rng, 4, 3);
  const std::vector<int> y(4, 0);
  double want = 0.0;
  const auto r = rows_of(f);
  for (std::size_t i = 0; i < 4; ++i) {
    oracle::Rows cand;
    for (std::size_t j = 0; j < 4; ++j)
      if (j != i) cand.push_back(r[j]);
    want += oracle::anchor_loss(r[i], cand, {1.0 / 3, 1.0 / 3, 1.0 / 3}, 0.4) / 4.0;
  }
  EXPECT_NEAR(supclr(f, y, 0.4).value, want, 1e-12);
}

TEST(Supclr, OracleScaleInvarianceAndGradients) {
  Matrix f = Matrix::from_rows({{1, 0, 0, 0}, {0, 1, 0, 0}, {1, 0, 0, 0}, {0, 1, 0, 0}});
  const std::vector<int> y = {0, 1, 0, 1};
  EXPECT_NEAR(supclr(f, y, 1.0).value, oracle::supclr(rows_of(f), y, 1.0), 1e-10);
  Rng rng(11);
  Matrix g = randn(rng, 6, 3);
  const std::vector<int> z = {0, 1, 1, 0, 1, 1};
  const double base = supclr(g, z, 0.3).value;
  EXPECT_NEAR(base, oracle::supclr(rows_of(g), z, 0.3), 1e-10);
  EXPECT_NEAR(supclr(3.0 * g, z, 0.3).value, base, 1e-10);
  const LossOutput out = supclr(g, z, 0.3);
  auto value = [&] { return supclr(g, z, 0.3).value; };
  EXPECT_LT(rel_err(out.grad_anchor, fd_grad(g, value)), 1e-4);
}

TEST(Supclr, AnchorWithoutPositiveIsLabelError) {
  Rng rng(12);
  const std::vector<int> y = {0, 1, 0, 2};
  EXPECT_THROW(supclr(randn(rng, 4, 3), y, 0.5), LabelError);
}

TEST(SupNpair, ReductionsAndOracle) {
  Rng rng(13);
  Matrix a = randn(rng, 3, 4), k = randn(rng, 3, 4);
  const std::vector<int> distinct = {0, 1, 2};
  EXPECT_NEAR(sup_npair(a, k, distinct, 0.2).value, npair(a, k, identity_labels(3), 0.2).value, 1e-14);
  const std::vector<int> same = {4, 4, 4};
  Matrix uniform(3, 3, 1.0 / 3);
  EXPECT_NEAR(sup_npair(a, k, same, 0.2).value, npair(a, k, uniform, 0.2).value, 1e-14);
  const std::vector<int> y = {0, 1, 0};
  const LossOutput out = sup_npair(a, k, y, 0.2);
  EXPECT_NEAR(out.value, oracle::sup_npair(rows_of(a), rows_of(k), y, 0.2), 1e-10);
  auto value = [&] { return sup_npair(a, k, y, 0.2).value; };
  EXPECT_LT(rel_err(out.grad_anchor, fd_grad(a, value)), 1e-4);
  ASSERT_TRUE(out.grad_keys.has_value());
  EXPECT_LT(rel_err(*out.grad_keys, fd_grad(k, value)), 1e-4);
}

TEST(ClassLabels, EmptyRowIsLabelError) {
  const std::vector<int> a = {0, 1};
  const std::vector<int> k = {0, 0};
  EXPECT_THROW(class_labels(a, k, {}), LabelError);
  const Matrix v = class_labels(std::vector<int>{0}, std::vector<int>{0, 1, 0}, {});
  EXPECT_DOUBLE_EQ(v(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(v(0, 1), 0.0);
}

TEST(MixPlan, Validation) {
  EXPECT_NO_THROW(MixPlan::uniform({1, 0, 2}, 0.3).validate());
  EXPECT_THROW(MixPlan::uniform({1, 1, 2}, 0.3).validate(), ConfigError);
  EXPECT_THROW(MixPlan::uniform({1, 0}, 1.3).validate(), ConfigError);
}

// Every i-Mix wrapper against the independent straight-loop reference.
TEST(Imix, MatchesOracleForEveryMethod) {
  Rng rng(14);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 2 + rng.uniform_index(3), d = 2 + rng.uniform_index(3);
    const auto perm = random_perm(rng, n);
    std::vector<double> lam(n);
    for (auto& l : lam) l = rng.uniform();
    const MixPlan plan{perm, lam};
    const double tau = rng.uniform(0.1, 1.0);
    const bool excl = t % 2 == 0;
    {
      ImixInputs in{Method::npair, randn(rng, n, d), randn(rng, n, d), nullptr, {}, tau};
      EXPECT_NEAR(imix::imix(in, plan).value,
                  oracle::imix_npair(rows_of(in.anchors), rows_of(in.keys), perm, lam, tau), 1e-10);
    }
    {
      ImixInputs in{Method::simclr, randn(rng, 2 * n, d), randn(rng, 2 * n, d), nullptr, {}, tau};
      EXPECT_NEAR(imix::imix(in, plan, ImixOptions{excl}).value,
                  oracle::imix_simclr(rows_of(in.anchors), rows_of(in.keys), perm, lam, tau, excl), 1e-10);
    }
    {
      std::vector<int> y = classes(rng, n, 1 + rng.uniform_index(n));
      std::vector<int> yy = y;
      yy.insert(yy.end(), y.begin(), y.end());
      ImixInputs in{Method::supclr, randn(rng, 2 * n, d), randn(rng, 2 * n, d), nullptr, yy, tau};
      EXPECT_NEAR(imix::imix(in, plan, ImixOptions{excl}).value,
                  oracle::imix_simclr(rows_of(in.anchors), rows_of(in.keys), perm, lam, tau, excl, &yy),
                  1e-10);
    }
    {
      std::vector<int> y = classes(rng, n, 1 + rng.uniform_index(n));
      ImixInputs in{Method::sup_npair, randn(rng, n, d), randn(rng, n, d), nullptr, y, tau};
      EXPECT_NEAR(imix::imix(in, plan).value,
                  oracle::imix_sup_npair(rows_of(in.anchors), rows_of(in.keys), y, perm, lam, tau), 1e-10);
    }
    {
      const MemoryBank bank(normalized(randn(rng, 1 + rng.uniform_index(4), d)));
      ImixInputs in{Method::moco, randn(rng, n, d), normalized(randn(rng, n, d)), &bank, {}, tau};
      EXPECT_NEAR(imix::imix(in, plan).value,
                  oracle::imix_moco(rows_of(in.anchors), rows_of(in.keys), rows_of(bank.ordered()), perm, lam,
                                    tau),
                  1e-10);
    }
    {
      ImixInputs in{Method::byol, randn(rng, n, d), randn(rng, n, d), nullptr, {}, tau};
      EXPECT_NEAR(imix::imix(in, plan).value, oracle::imix_byol(rows_of(in.anchors), rows_of(in.keys), perm, lam),
                  1e-10);
    }
  }
}

TEST(Imix, LinearityInTheLabel) {
  Rng rng(15);
  for (Method m : {Method::npair, Method::simclr, Method::moco, Method::supclr, Method::sup_npair}) {
    for (int t = 0; t < 100; ++t) {
      const std::size_t n = 2 + rng.uniform_index(4), d = 2 + rng.uniform_index(4);
      const bool two = m == Method::simclr || m == Method::supclr;
      ImixInputs in;
      in.method = m;
      in.anchors = randn(rng, two ? 2 * n : n, d);
      in.keys = randn(rng, two ? 2 * n : n, d);
      in.tau = rng.uniform(0.05, 1.0);
      std::optional<MemoryBank> bank;
      if (m == Method::moco) {
        in.keys = normalized(in.keys);
        bank.emplace(normalized(randn(rng, rng.uniform_index(5), d)));
        in.bank = &*bank;
      }
      if (m == Method::sup_npair) in.labels = classes(rng, n, 1 + rng.uniform_index(n));
      if (m == Method::supclr) {
        const auto y = classes(rng, n, 1 + rng.uniform_index(n));
        in.labels = y;
        in.labels.insert(in.labels.end(), y.begin(), y.end());
      }
      const double l = t == 0 ? 0.3 : rng.uniform();
      const MixPlan plan = MixPlan::uniform(random_perm(rng, n), l);
      const ImixOptions opts{t % 3 == 0};
      const double mixed = imix::imix(in, plan, opts).value;
      const double li = imix::imix(in, plan, opts, LabelChoice::principal).value;
      const double lj = imix::imix(in, plan, opts, LabelChoice::partner).value;
      EXPECT_NEAR(mixed, l * li + (1 - l) * lj, 1e-12) << method_name(m);
    }
  }
}

TEST(Imix, ByolAffineIdentity) {
  Rng rng(16);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng.uniform_index(4), d = 2 + rng.uniform_index(4);
    ImixInputs in{Method::byol, randn(rng, n, d), randn(rng, n, d), nullptr, {}, 0.1};
    const double l = t == 0 ? 0.3 : rng.uniform();
    const MixPlan plan = MixPlan::uniform(random_perm(rng, n), l);
    const LossOutput mixed = imix::imix(in, plan);
    const LossOutput li = imix::imix(in, plan, {}, LabelChoice::principal);
    const LossOutput lj = imix::imix(in, plan, {}, LabelChoice::partner);
    const auto u = rows_of(normalized(in.keys));
    for (std::size_t i = 0; i < n; ++i) {
      double sq = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double v = l * u[i][c] + (1 - l) * u[plan.perm[i]][c];
        sq += v * v;
      }
      EXPECT_NEAR(mixed.per_anchor[i] - (l * li.per_anchor[i] + (1 - l) * lj.per_anchor[i]), sq - 1.0, 1e-12);
    }
  }
}

TEST(Imix, ReductionsAtLambdaEndpoints) {
  Rng rng(17);
  const std::size_t n = 4, d = 3;
  const auto perm = random_perm(rng, n);
  const Matrix a = randn(rng, n, d), k = randn(rng, n, d);
  ImixInputs in{Method::npair, a, k, nullptr, {}, 0.2};
  EXPECT_EQ(imix::imix(in, MixPlan::uniform(perm, 1.0)).value, npair(a, k, identity_labels(n), 0.2).value);
  // lambda = 0: anchors are all partner inputs; the loss is the base loss on the
  // permuted batch
  Matrix pa(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) pa(i, c) = a(perm[i], c);
  ImixInputs zero{Method::npair, pa, k, nullptr, {}, 0.2};
  EXPECT_EQ(imix::imix(zero, MixPlan::uniform(perm, 0.0)).value, npair(a, k, identity_labels(n), 0.2).value);

  const Matrix f = randn(rng, 2 * n, d);
  ImixInputs s{Method::simclr, f, f, nullptr, {}, 0.5};
  EXPECT_NEAR(imix::imix(s, MixPlan::identity(n)).value, simclr(f, simclr_labels(n), 0.5).value, 1e-15);
  ImixInputs b{Method::byol, a, k, nullptr, {}, 0.1};
  EXPECT_EQ(imix::imix(b, MixPlan::uniform(perm, 1.0)).value, byol(a, k, identity_labels(n)).value);
}

TEST(Imix, GradientsMatchFiniteDifferences) {
  Rng rng(18);
  for (Method m : {Method::npair, Method::simclr, Method::moco, Method::byol, Method::supclr,
                   Method::sup_npair}) {
    const std::size_t n = 3, d = 4;
    const bool two = m == Method::simclr || m == Method::supclr;
    ImixInputs in;
    in.method = m;
    in.anchors = randn(rng, two ? 2 * n : n, d);
    in.keys = randn(rng, two ? 2 * n : n, d);
    in.tau = 0.4;
    const MemoryBank bank(normalized(randn(rng, 3, d)));
    if (m == Method::moco) {
      in.keys = normalized(in.keys);
      in.bank = &bank;
    }
    if (m == Method::sup_npair) in.labels = {0, 1, 0};
    if (m == Method::supclr) in.labels = {0, 1, 0, 0, 1, 0};
    const MixPlan plan{{2, 0, 1}, {0.3, 0.8, 0.5}};
    const LossOutput out = imix::imix(in, plan);
    auto value = [&] { return imix::imix(in, plan).value; };
    EXPECT_LT(rel_err(out.grad_anchor, fd_grad(in.anchors, value)), 1e-4) << method_name(m);
    if (out.grad_keys) {
      EXPECT_LT(rel_err(*out.grad_keys, fd_grad(in.keys, value)), 1e-4) << method_name(m);
    }
  }
}

TEST(MaskedCe, CandidateProbabilitiesSumToOne) {
  // with a one-hot label on candidate j the loss is -log p_j
  Rng rng(19);
  const Matrix a = randn(rng, 4, 3), k = randn(rng, 5, 3);
  std::vector<std::uint8_t> allowed(20, 1);
  allowed[3] = 0;  // anchor 0 never sees candidate 3
  for (std::size_t i = 0; i < 4; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      if (!allowed[i * 5 + j]) continue;
      Matrix w(4, 5);
      for (std::size_t r = 0; r < 4; ++r) w(r, r == 0 && j == 3 ? 0 : j) = 1.0;
      total += std::exp(-masked_ce(a, k, w, allowed, 0.5, false, false).per_anchor[i]);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Imix, PermutedBatchGivesSameMean) {
  Rng rng(20);
  const std::size_t n = 6, d = 3;
  const Matrix a = randn(rng, n, d), k = randn(rng, n, d);
  const double base = npair(a, k, identity_labels(n), 0.3).value;
  const auto p = random_perm(rng, n);
  Matrix pa(n, d), pk(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      pa(i, c) = a(p[i], c);
      pk(i, c) = k(p[i], c);
    }
  EXPECT_NEAR(npair(pa, pk, identity_labels(n), 0.3).value, base, 1e-14);
  const std::vector<double> v = {0.1, 1e10, -3, 7e-12};
  const std::vector<double> w = {7e-12, -3, 1e10, 0.1};
  EXPECT_EQ(order_free_mean(v), order_free_mean(w));
}

TEST(MemoryBank, FifoAndCapacity) {
  Rng rng(21);
  MemoryBank bank(4, 3, rng);
  EXPECT_EQ(bank.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(l2_norm(bank.ordered().row(i)), 1.0, 1e-12);
  Matrix pushes[3];
  for (auto& p : pushes) {
    p = normalized(randn(rng, 2, 3));
    bank.push(p);
    EXPECT_EQ(bank.size(), 4u);
  }
  const Matrix got = bank.ordered();
  EXPECT_EQ(max_abs_diff(rows(got, 0, 2), pushes[1]), 0.0);
  EXPECT_EQ(max_abs_diff(rows(got, 2, 4), pushes[2]), 0.0);
}

TEST(MemoryBank, Rejections) {
  Rng rng(22);
  MemoryBank bank(2, 3, rng);
  EXPECT_THROW(bank.push(Matrix::from_rows({{1, 1, 0}})), UsageError);
  EXPECT_THROW(bank.push(normalized(randn(rng, 3, 3))), ConfigError);
  EXPECT_THROW(bank.push(normalized(randn(rng, 1, 4))), ShapeError);
}

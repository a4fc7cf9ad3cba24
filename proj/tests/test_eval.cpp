#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "imix/data.hpp"
#include "imix/errors.hpp"
#include "imix/eval.hpp"
#include "imix/linalg.hpp"
#include "oracle.hpp"
#include "support.hpp"

using namespace imix;
using testing_support::randn;

namespace {

EncoderState small_encoder(Rng& rng, std::size_t in) {
  EncoderSpec s;
  s.input_dim = in;
  s.backbone = mlp_backbone(in, 6, 2, true);
  s.proj_hidden = 5;
  s.proj_out = 3;
  return make_encoder(s, rng);
}

LinearProbe fixed_probe(const Matrix& w) { return {w, std::vector<double>(w.cols(), 0.0)}; }

Matrix permuted(const Matrix& m, const std::vector<std::size_t>& p) { return m.gather_rows(p); }

}  // namespace

TEST(Extract, PureShapedAndHeadless) {
  Rng rng(1);
  EncoderState s = small_encoder(rng, 4);
  forward(s, randn(rng, 16, 4), Mode::train);  // nontrivial running stats
  const Matrix x = randn(rng, 7, 4);
  const Matrix a = extract(s, x);
  EXPECT_EQ(a, extract(s, x));
  EXPECT_EQ(a.rows(), 7u);
  EXPECT_EQ(a.cols(), 6u);
  EXPECT_EQ(extract(s, x, FeatureSource::projection).cols(), 3u);
  EXPECT_THROW(extract(s, randn(rng, 2, 5)), ShapeError);
  s.online.backbone = Mlp::identity(4);
  EXPECT_EQ(extract(s, x), x);
}

TEST(Top1, SimpleCounts) {
  const LinearProbe p = fixed_probe(Matrix::identity(2));
  const Matrix f = Matrix::from_rows({{1, 0}, {0, 1}, {1, 0}, {0, 1}});
  EXPECT_EQ(top1(p, f, std::vector<int>{0, 1, 0, 1}), 1.0);
  EXPECT_EQ(top1(p, f, std::vector<int>{1, 0, 1, 0}), 0.0);
  EXPECT_EQ(top1(p, f, std::vector<int>{0, 0, 1, 0}), 0.25);
  // tie goes to class 0
  EXPECT_EQ(p.predict(Matrix::from_rows({{1, 1}}))[0], 0);
}

TEST(Top1, PerClassDecomposition) {
  Rng rng(2);
  const Matrix f = randn(rng, 50, 3);
  const LinearProbe p = fixed_probe(randn(rng, 3, 4));
  std::vector<int> y(50);
  for (std::size_t i = 0; i < 50; ++i) y[i] = static_cast<int>(rng.uniform_index(4));
  const PerClassAccuracy pc = per_class_accuracy(p, f, y, 5);
  double weighted = 0.0;
  std::size_t total = 0;
  for (std::size_t c = 0; c < 5; ++c) {
    weighted += pc.accuracy[c] * static_cast<double>(pc.count[c]);
    total += pc.count[c];
  }
  EXPECT_EQ(total, 50u);
  EXPECT_EQ(pc.accuracy[4], 0.0);
  EXPECT_EQ(std::lround(weighted), std::lround(top1(p, f, y) * 50));
  EXPECT_NEAR(weighted / 50.0, top1(p, f, y), 1e-15);
}

TEST(ProbePinv, OneHotFeaturesFitPerfectly) {
  const std::vector<int> y = {0, 1, 2, 1, 0, 2};
  Matrix f(6, 3);
  for (std::size_t i = 0; i < 6; ++i) f(i, static_cast<std::size_t>(y[i])) = 1.0;
  EXPECT_EQ(top1(probe_pinv(f, y, 3), f, y), 1.0);
}

TEST(ProbePinv, MatchesNormalEquations) {
  Rng rng(3);
  const Matrix f = randn(rng, 40, 4);
  std::vector<int> y(40);
  for (std::size_t i = 0; i < 40; ++i) y[i] = static_cast<int>(i % 3);
  const LinearProbe p = probe_pinv(f, y, 3);
  Matrix a(40, 5), t(40, 3);
  for (std::size_t i = 0; i < 40; ++i) {
    for (std::size_t c = 0; c < 4; ++c) a(i, c) = f(i, c);
    a(i, 4) = 1.0;
    t(i, static_cast<std::size_t>(y[i])) = 1.0;
  }
  // (A^T A) W = A^T Y solved through the symmetric eigendecomposition
  const Matrix ata = matmul_tn(a, a);
  const SymEig e = sym_eig(ata);
  Matrix inv(5, 5);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t k = 0; k < 5; ++k) inv(i, j) += e.vectors(i, k) * e.vectors(j, k) / e.values[k];
  const Matrix w = matmul(inv, matmul_tn(a, t));
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t d = 0; d < 4; ++d) EXPECT_NEAR(p.weights(d, c), w(d, c), 1e-8);
    EXPECT_NEAR(p.bias[c], w(4, c), 1e-8);
  }
}

TEST(ProbePinv, RankDeficientMinimumNorm) {
  Rng rng(4);
  const Matrix f = randn(rng, 3, 8);
  const std::vector<int> y = {0, 1, 0};
  const LinearProbe p = probe_pinv(f, y, 2);
  // interpolates the one-hot targets exactly
  const Matrix out = p.logits(f);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(out(i, c), y[i] == static_cast<int>(c) ? 1.0 : 0.0, 1e-8);
  // minimum norm: the solution lies in the row space of [F 1]
  Matrix a(3, 9);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < 8; ++c) a(i, c) = f(i, c);
    a(i, 8) = 1.0;
  }
  const Matrix proj = matmul(pinv(a), a);
  Matrix w(9, 2);
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t d = 0; d < 8; ++d) w(d, c) = p.weights(d, c);
    w(8, c) = p.bias[c];
  }
  EXPECT_LT(max_abs_diff(matmul(proj, w), w), 1e-8);
}

TEST(ProbePinv, WellSeparatedBlobs) {
  Rng rng(5);
  const Dataset ds = synth_blobs(rng, 2000, 2, 4, 4, 6.0);
  const auto [tr, te] = split(ds, SplitSpec{0.5, 0.5, 1, {}, {}});
  const LinearProbe p = probe_pinv(tr.features, *tr.labels, 2);
  EXPECT_GE(top1(p, te.features, *te.labels), 0.99);
}

TEST(ProbeSgd, SeparableTwoClass) {
  Rng rng(6);
  const Dataset ds = synth_blobs(rng, 200, 2, 2, 0, 8.0);
  ProbeSgdOptions o;
  o.epochs = 20;
  const ProbeSgdResult r = probe_sgd(ds.features, *ds.labels, 2, o);
  EXPECT_EQ(top1(r.probe, ds.features, *ds.labels), 1.0);
}

TEST(ProbeSgd, ShuffledLabelsGiveChance) {
  Rng rng(7);
  const Dataset ds = synth_blobs(rng, 4000, 4, 4, 4, 3.0);
  std::vector<int> y = *ds.labels;
  const auto p = rng.permutation(y.size());
  std::vector<int> shuffled(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) shuffled[i] = y[p[i]];
  const SplitIndices s = split_indices(ds, SplitSpec{0.5, 0.5, 2, {}, {}});
  auto pick = [&](const std::vector<std::size_t>& idx) {
    std::vector<int> out;
    for (std::size_t i : idx) out.push_back(shuffled[i]);
    return out;
  };
  ProbeSgdOptions o;
  o.epochs = 10;
  o.lr_grid = {1, 10};
  const ProbeSgdResult r = probe_sgd(ds.features.gather_rows(s.train), pick(s.train), 4, o);
  EXPECT_NEAR(top1(r.probe, ds.features.gather_rows(s.test), pick(s.test)), 0.25, 0.05);
}

TEST(ProbeSgd, SelectsArgmaxOfGrid) {
  Rng rng(8);
  const Dataset ds = synth_blobs(rng, 400, 4, 4, 4, 2.0);
  ProbeSgdOptions o;
  o.epochs = 10;
  const ProbeSgdResult r = probe_sgd(ds.features, *ds.labels, 4, o);
  ASSERT_EQ(r.val_accuracy.size(), o.lr_grid.size());
  const auto best = std::max_element(r.val_accuracy.begin(), r.val_accuracy.end());
  EXPECT_EQ(r.selected_lr, o.lr_grid[static_cast<std::size_t>(best - r.val_accuracy.begin())]);
}

TEST(ProbeSgd, SingleClassIsConfigError) {
  Rng rng(9);
  EXPECT_THROW(probe_sgd(randn(rng, 10, 2), std::vector<int>(10, 1), 2), ConfigError);
}

TEST(Fed, IdenticalSetsAndSymmetry) {
  Rng rng(10);
  for (int t = 0; t < 10; ++t) {
    const Matrix a = randn(rng, 30, 5), b = randn(rng, 25, 5);
    EXPECT_NEAR(fed(a, a), 0.0, 1e-8);
    EXPECT_NEAR(fed(a, b), fed(b, a), 1e-8);
    EXPECT_GE(fed(a, b), 0.0);
    EXPECT_NEAR(fed(permuted(a, rng.permutation(30)), b), fed(a, b), 1e-12);
    EXPECT_NEAR(fed(3.0 * a, b), fed(a, b), 1e-12);
  }
}

TEST(Fed, SinglePointSets) {
  const Matrix e1 = Matrix::from_rows({{1, 0}, {1, 0}});
  const Matrix e2 = Matrix::from_rows({{0, 1}, {0, 1}});
  EXPECT_NEAR(fed(e1, e2), 2.0, 1e-12);
}

TEST(Fed, CommutingDiagonalCovariances) {
  FedStats a{{0.1, 0.2, 0.3}, Matrix(3, 3)}, b{{0.1, 0.2, 0.3}, Matrix(3, 3)};
  const double va[] = {0.5, 0.04, 1.2}, vb[] = {0.1, 0.09, 1.2};
  double want = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    a.cov(i, i) = va[i];
    b.cov(i, i) = vb[i];
    want += std::pow(std::sqrt(va[i]) - std::sqrt(vb[i]), 2);
  }
  EXPECT_NEAR(fed(a, b), want, 1e-12);
}

TEST(Fed, MatchesTwoDimensionalClosedForm) {
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    const Matrix a = randn(rng, 12, 2), b = randn(rng, 9, 2) + Matrix(9, 2, 0.5);
    EXPECT_NEAR(fed(a, b), oracle::fed_2d(oracle::rows_of(a), oracle::rows_of(b)), 1e-8);
  }
}

TEST(Fed, Errors) {
  Rng rng(12);
  EXPECT_THROW(fed(randn(rng, 1, 3), randn(rng, 4, 3)), Error);
  EXPECT_THROW(fed(Matrix::from_rows({{0, 0}, {1, 0}}), randn(rng, 3, 2)), NumericError);
  EXPECT_THROW(fed(randn(rng, 3, 2), randn(rng, 3, 4)), ShapeError);
}

TEST(Fed, StatsAreSymmetricAndNormalized) {
  Rng rng(13);
  const FedStats s = FedStats::from_features(randn(rng, 20, 4, 10.0));
  EXPECT_LT(max_abs_diff(s.cov, s.cov.transposed()), 1e-10);
  EXPECT_LE(l2_norm(s.mean), 1.0 + 1e-12);
}

TEST(Export, CsvRoundTrip) {
  Rng rng(14);
  const Matrix f = randn(rng, 3, 2);
  const std::vector<int> y = {1, 0, 1};
  const auto dir = testing_support::temp_dir("export");
  export_embeddings(f, &y, dir / "e.csv");
  const Dataset back = load_dataset(dir / "e.csv");
  EXPECT_EQ(back.size(), 3u);
  EXPECT_EQ(back.dim(), 2u);
  EXPECT_LT(max_abs_diff(back.features, f), 1e-12);
  EXPECT_EQ(*back.labels, y);
  export_embeddings(f, nullptr, dir / "u.csv");
  const Dataset unl = load_csv(dir / "u.csv");
  EXPECT_FALSE(unl.has_labels());
  EXPECT_EQ(unl.dim(), 2u);
  EXPECT_THROW(export_embeddings(f, nullptr, dir / "missing" / "x.csv"), IoError);
}

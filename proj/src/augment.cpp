#include "imix/augment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "imix/errors.hpp"

namespace imix {

std::size_t SpatialShape::cells() const {
  if (dims.empty()) return 0;
  std::size_t n = 1;
  for (std::size_t d : dims) n *= d;
  return n;
}

void SpatialShape::validate(std::size_t feature_dim) const {
  if (dims.empty()) return;
  for (std::size_t d : dims)
    if (d == 0) throw ConfigError("spatial shape: axis lengths must be positive");
  if (cells() != feature_dim) {
    throw ConfigError("spatial shape covers " + std::to_string(cells()) +
                      " cells but features have " + std::to_string(feature_dim) + " columns");
  }
}

std::string_view mix_operator_name(MixOperator op) {
  return op == MixOperator::mixup ? "mixup" : "cutmix";
}

MixOperator parse_mix_operator(std::string_view name) {
  if (name == "mixup") return MixOperator::mixup;
  if (name == "cutmix") return MixOperator::cutmix;
  throw ConfigError("unknown mix operator '" + std::string(name) + "' (expected mixup, cutmix)");
}

std::string_view granularity_name(Granularity g) {
  return g == Granularity::per_batch ? "per_batch" : "per_sample";
}

Granularity parse_granularity(std::string_view name) {
  if (name == "per_batch") return Granularity::per_batch;
  if (name == "per_sample") return Granularity::per_sample;
  throw ConfigError("unknown mix granularity '" + std::string(name) +
                    "' (expected per_batch, per_sample)");
}

void MixSpec::validate(const SpatialShape& shape) const {
  if (!(alpha > 0.0)) throw ConfigError("mix.alpha must be positive");
  if (op == MixOperator::cutmix) {
    if (shape.empty()) {
      throw ConfigError("cutmix needs data with a declared spatial shape; use mixup for "
                        "features without spatial correlation");
    }
    if (shape.dims.size() > 2) throw ConfigError("cutmix supports 1-D or 2-D shapes only");
  }
}

Matrix mask_noise(Rng& rng, const Matrix& x, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("mask_noise: p must be in [0,1]");
  Matrix out = x;
  if (p == 0.0) return out;
  for (double& v : out.flat())
    if (rng.uniform() < p) v = 0.0;
  return out;
}

Matrix gaussian_noise(Rng& rng, const Matrix& x, double sigma) {
  if (!(sigma >= 0.0)) throw ConfigError("gaussian_noise: sigma must be >= 0");
  Matrix out = x;
  if (sigma == 0.0) return out;
  for (double& v : out.flat()) v += sigma * rng.normal();
  return out;
}

std::vector<double> mixup_op(std::span<const double> x_i, std::span<const double> x_j,
                             double lambda) {
  if (x_i.size() != x_j.size()) throw ShapeError("mixup_op: inputs differ in length");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("mixup_op: lambda must be in [0,1]");
  std::vector<double> out(x_i.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = lambda * x_i[k] + (1.0 - lambda) * x_j[k];
  }
  return out;
}

namespace {

struct Region {
  std::size_t h = 0;
  std::size_t w = 0;
};

Region region_for(std::size_t area, std::size_t rows, std::size_t cols) {
  Region best;
  double best_gap = std::numeric_limits<double>::infinity();
  double best_aspect = std::numeric_limits<double>::infinity();
  const double grid_aspect = std::log(static_cast<double>(rows) / static_cast<double>(cols));
  for (std::size_t h = 1; h <= rows; ++h) {
    // Candidate widths around area / h, plus the full width when area / h
    // does not fit.
    const std::size_t base = area / h;
    for (std::size_t w : {base, base + 1, cols}) {
      if (w == 0 || w > cols) continue;
      const double gap = std::abs(static_cast<double>(h * w) - static_cast<double>(area));
      const double aspect =
          std::abs(std::log(static_cast<double>(h) / static_cast<double>(w)) - grid_aspect);
      if (gap < best_gap || (gap == best_gap && aspect < best_aspect)) {
        best = {h, w};
        best_gap = gap;
        best_aspect = aspect;
      }
    }
  }
  return best;
}

}  // namespace

CutMixResult cutmix_op(Rng& rng, std::span<const double> x_i, std::span<const double> x_j,
                       double lambda, const SpatialShape& shape) {
  if (shape.empty()) {
    throw ConfigError("cutmix on data without spatial structure; declare a spatial shape");
  }
  if (shape.dims.size() > 2) throw ConfigError("cutmix supports 1-D or 2-D shapes only");
  if (x_i.size() != x_j.size()) throw ShapeError("cutmix_op: inputs differ in length");
  shape.validate(x_i.size());
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("cutmix_op: lambda must be in [0,1]");

  const std::size_t cells = shape.cells();
  const std::size_t rows = shape.dims.size() == 2 ? shape.dims[0] : 1;
  const std::size_t cols = shape.dims.back();
  const auto area =
      static_cast<std::size_t>(std::llround((1.0 - lambda) * static_cast<double>(cells)));

  CutMixResult out;
  out.mixed.assign(x_i.begin(), x_i.end());
  out.from_j.assign(cells, 0);
  std::size_t pasted = 0;
  if (area > 0) {
    const Region reg = rows == 1 ? Region{1, area} : region_for(area, rows, cols);
    const std::size_t top = rng.uniform_index(rows - reg.h + 1);
    const std::size_t left = rng.uniform_index(cols - reg.w + 1);
    for (std::size_t r = top; r < top + reg.h; ++r)
      for (std::size_t c = left; c < left + reg.w; ++c) {
        const std::size_t k = r * cols + c;
        out.mixed[k] = x_j[k];
        out.from_j[k] = 1;
      }
    pasted = reg.h * reg.w;
  }
  out.realized_lambda = 1.0 - static_cast<double>(pasted) / static_cast<double>(cells);
  return out;
}

std::vector<double> inputmix_with(std::span<const double> principal, std::span<const double> aux1,
                                  std::span<const double> aux2, const std::array<double, 3>& l) {
  if (principal.size() != aux1.size() || principal.size() != aux2.size()) {
    throw ShapeError("inputmix: inputs differ in length");
  }
  const double c0 = 0.5 * l[0] + 0.5;
  const double c1 = 0.5 * l[1];
  const double c2 = 0.5 * l[2];
  std::vector<double> out(principal.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = c0 * principal[k] + c1 * aux1[k] + c2 * aux2[k];
  }
  return out;
}

InputMixResult inputmix(Rng& rng, std::span<const double> principal, std::span<const double> aux1,
                        std::span<const double> aux2) {
  const std::vector<double> d = dirichlet_sample(rng, 3);
  const std::array<double, 3> l{d[0], d[1], d[2]};
  InputMixResult out;
  out.mixed = inputmix_with(principal, aux1, aux2, l);
  out.coefficients = {0.5 * l[0] + 0.5, 0.5 * l[1], 0.5 * l[2]};
  return out;
}

Matrix inputmix_batch(Rng& rng, const Matrix& x) {
  const std::vector<std::size_t> p1 = rng.permutation(x.rows());
  const std::vector<std::size_t> p2 = rng.permutation(x.rows());
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const InputMixResult m = inputmix(rng, x.row(i), x.row(p1[i]), x.row(p2[i]));
    std::copy(m.mixed.begin(), m.mixed.end(), out.row(i).begin());
  }
  return out;
}

void AugmentPolicy::validate() const {
  if (!(mask_prob >= 0.0 && mask_prob <= 1.0)) throw ConfigError("augment.mask_prob must be in [0,1]");
  if (!(noise_sigma >= 0.0)) throw ConfigError("augment.noise_sigma must be >= 0");
}

namespace {

Matrix augment_view(Rng& rng, const Matrix& x, const AugmentPolicy& policy, bool mix) {
  Matrix v = mix ? inputmix_batch(rng, x) : x;
  if (policy.mask_prob > 0.0) v = mask_noise(rng, v, policy.mask_prob);
  if (policy.noise_sigma > 0.0) v = gaussian_noise(rng, v, policy.noise_sigma);
  return v;
}

}  // namespace

ViewBatch make_views(Rng& rng, const Matrix& x, const AugmentPolicy& policy) {
  policy.validate();
  ViewBatch out;
  out.view1 = augment_view(rng, x, policy, policy.inputmix);
  out.view2 = augment_view(rng, x, policy, policy.inputmix && policy.inputmix_both_views);
  out.labels = identity_labels(x.rows());
  return out;
}

MixPlan sample_plan(Rng& rng, std::size_t n, const MixSpec& spec) {
  if (!(spec.alpha > 0.0)) throw ConfigError("mix.alpha must be positive");
  MixPlan plan;
  plan.perm = rng.permutation(n);
  if (spec.granularity == Granularity::per_batch) {
    plan.lambda.assign(n, beta_sample(rng, spec.alpha));
  } else {
    plan.lambda.resize(n);
    for (double& l : plan.lambda) l = beta_sample(rng, spec.alpha);
  }
  return plan;
}

Matrix apply_mix(Rng& rng, const Matrix& x, MixPlan& plan, const MixSpec& spec,
                 const SpatialShape& shape) {
  plan.validate();
  if (plan.size() != x.rows()) throw ShapeError("apply_mix: plan size != batch size");
  spec.validate(shape);
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto dst = out.row(i);
    if (spec.op == MixOperator::mixup) {
      const double l = plan.lambda[i];
      auto a = x.row(i);
      auto b = x.row(plan.perm[i]);
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = l * a[k] + (1.0 - l) * b[k];
    } else {
      const CutMixResult c = cutmix_op(rng, x.row(i), x.row(plan.perm[i]), plan.lambda[i], shape);
      std::copy(c.mixed.begin(), c.mixed.end(), dst.begin());
      plan.lambda[i] = c.realized_lambda;
    }
  }
  return out;
}

}  // namespace imix

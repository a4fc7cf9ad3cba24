#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "imix/losses.hpp"
#include "imix/matrix.hpp"
#include "imix/rng.hpp"

namespace imix {

// Axis lengths of the flat feature vector, row-major. Empty = no spatial
// structure.
struct SpatialShape {
  std::vector<std::size_t> dims;

  bool empty() const { return dims.empty(); }
  std::size_t cells() const;
  // ConfigError unless empty or product(dims) == feature_dim.
  void validate(std::size_t feature_dim) const;
};

enum class MixOperator { mixup, cutmix };
enum class Granularity { per_batch, per_sample };

std::string_view mix_operator_name(MixOperator op);
MixOperator parse_mix_operator(std::string_view name);
std::string_view granularity_name(Granularity g);
Granularity parse_granularity(std::string_view name);

struct MixSpec {
  MixOperator op = MixOperator::mixup;
  double alpha = 1.0;
  Granularity granularity = Granularity::per_batch;

  // ConfigError for alpha <= 0 or cutmix on non-spatial data.
  void validate(const SpatialShape& shape) const;
};

// Each entry zeroed independently with probability p.
Matrix mask_noise(Rng& rng, const Matrix& x, double p);
// x + sigma * N(0, 1) per entry.
Matrix gaussian_noise(Rng& rng, const Matrix& x, double sigma);

// lambda x_i + (1 - lambda) x_j
std::vector<double> mixup_op(std::span<const double> x_i, std::span<const double> x_j,
                             double lambda);

struct CutMixResult {
  std::vector<double> mixed;
  double realized_lambda = 1.0;       // fraction of cells kept from x_i
  std::vector<std::uint8_t> from_j;   // 1 where the cell came from x_j
};

// Pastes a contiguous region of x_j into x_i. The region covers the whole
// number of cells nearest to (1 - lambda) * cells; on a 2-D grid its sides
// are the factor pair closest to that area (ties: closest to the grid's
// aspect ratio, then fewer rows). Placement is uniform over positions where
// the region fits. Supports 1-D and 2-D shapes.
CutMixResult cutmix_op(Rng& rng, std::span<const double> x_i, std::span<const double> x_j,
                       double lambda, const SpatialShape& shape);

struct InputMixResult {
  std::vector<double> mixed;
  std::array<double, 3> coefficients{};  // principal, aux1, aux2
};

// Coefficients (0.5 l1 + 0.5, 0.5 l2, 0.5 l3) with l ~ Dirichlet(1, 1, 1).
InputMixResult inputmix(Rng& rng, std::span<const double> principal, std::span<const double> aux1,
                        std::span<const double> aux2);
std::vector<double> inputmix_with(std::span<const double> principal, std::span<const double> aux1,
                                  std::span<const double> aux2, const std::array<double, 3>& l);
// Every row mixed with two auxiliaries chosen by two independent random
// permutations of the batch.
Matrix inputmix_batch(Rng& rng, const Matrix& x);

struct AugmentPolicy {
  double mask_prob = 0.0;
  double noise_sigma = 0.0;
  bool inputmix = false;
  bool inputmix_both_views = true;

  bool empty() const { return mask_prob == 0.0 && noise_sigma == 0.0 && !inputmix; }
  void validate() const;
};

struct ViewBatch {
  Matrix view1;
  Matrix view2;
  VirtualLabels labels;  // identity(N)
};

// Two independently augmented views of x. An empty policy yields two exact
// copies.
ViewBatch make_views(Rng& rng, const Matrix& x, const AugmentPolicy& policy);

// Fresh permutation and lambda ~ Beta(alpha, alpha), one per batch or one per
// sample.
MixPlan sample_plan(Rng& rng, std::size_t n, const MixSpec& spec);

// Row i <- Mix(x_i, x_perm(i); lambda_i). For cutmix the realised lambdas
// overwrite plan.lambda.
Matrix apply_mix(Rng& rng, const Matrix& x, MixPlan& plan, const MixSpec& spec,
                 const SpatialShape& shape);

}  // namespace imix

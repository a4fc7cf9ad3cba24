#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "imix/matrix.hpp"
#include "imix/memory_bank.hpp"

namespace imix {

// Loss value (mean over anchors) with gradients w.r.t. the raw, unnormalised
// embedding rows. grad_keys is absent when keys are stop-gradient (MoCo,
// BYOL) or when anchors and keys are one matrix (SimCLR, SupCLR), in which
// case grad_anchor already holds the total.
struct LossOutput {
  double value = 0.0;
  Matrix grad_anchor;
  std::optional<Matrix> grad_keys;
  std::vector<double> per_anchor;
};

// Per-anchor soft labels over candidates, as rows of a matrix.
using VirtualLabels = Matrix;

// Row-wise softmax cross-entropy on cosine similarities:
//   loss_i = -sum_j W_ij log softmax_j(s(a_i, k_j) / tau), over allowed j.
// W rows must be nonnegative, sum to 1 and vanish outside allowed (LabelError).
// allowed is M x P row-major; empty means every pair is allowed.
// If keys_are_anchors, anchors and candidates are the same matrix and the
// key-side gradient is folded into grad_anchor.
LossOutput masked_ce(const Matrix& anchors, const Matrix& candidates, const VirtualLabels& w,
                     std::span<const std::uint8_t> allowed, double tau, bool keys_are_anchors,
                     bool want_key_grad);

// -sum_c y_c log softmax_c(F W), averaged over rows. grad_anchor is w.r.t. F,
// grad_keys w.r.t. the D x C classifier.
LossOutput sup_ce(const Matrix& features, const Matrix& classifier, const Matrix& targets);

// Cross-entropy at lambda x_i + (1 - lambda) x_j against the mixed label;
// grad_anchor is w.r.t. the mixed input.
LossOutput mixup_sup(const Matrix& x_i, const Matrix& y_i, const Matrix& x_j, const Matrix& y_j,
                     double lambda, const Matrix& classifier);

LossOutput npair(const Matrix& anchors, const Matrix& keys, const VirtualLabels& v, double tau);
// F holds both views: rows [0, N) first view, [N, 2N) second view.
LossOutput simclr(const Matrix& f, const VirtualLabels& v, double tau);
// Candidates are the N EMA keys followed by the bank (oldest first).
LossOutput moco(const Matrix& anchors, const Matrix& ema_keys, const MemoryBank& bank,
                const VirtualLabels& v, double tau);
// mean_i |g_i / |g_i| - T^ v_i|^2 with T^ the row-normalised targets.
LossOutput byol(const Matrix& predictions, const Matrix& targets, const VirtualLabels& v);
LossOutput supclr(const Matrix& f, std::span<const int> labels, double tau);
LossOutput sup_npair(const Matrix& anchors, const Matrix& keys, std::span<const int> labels,
                     double tau);

// Default virtual labels.
VirtualLabels identity_labels(std::size_t n);
VirtualLabels simclr_labels(std::size_t n);  // 2N x 2N, positive at i +- N
VirtualLabels moco_labels(std::size_t n, std::size_t bank_size);
// Same-class indicator rows scaled to unit mass; `allowed` (M x P, may be
// empty) removes candidates before normalising. LabelError if a row is empty.
VirtualLabels class_labels(std::span<const int> anchor_labels, std::span<const int> key_labels,
                           std::span<const std::uint8_t> allowed);

enum class Method { npair, simclr, moco, byol, supclr, sup_npair };
std::string_view method_name(Method m);
Method parse_method(std::string_view name);

// Pairing permutation and mixing coefficient for every principal sample.
// Per-batch lambda is a plan whose lambdas are all equal.
struct MixPlan {
  std::vector<std::size_t> perm;
  std::vector<double> lambda;

  static MixPlan identity(std::size_t n);
  static MixPlan uniform(std::vector<std::size_t> perm, double lambda);
  std::size_t size() const { return perm.size(); }
  void validate() const;
};

// Label variant used for the loss: the mixed label, or only the principal's
// or partner's label under the same mixed logits.
enum class LabelChoice { mixed, principal, partner };

struct ImixOptions {
  // Also remove the mixing partner from a SimCLR/SupCLR anchor's candidates.
  bool exclude_partner = false;
};

struct ImixInputs {
  Method method = Method::npair;
  // Embeddings of mixed inputs: N rows, 2N for simclr/supclr, predictions
  // g(f) for byol.
  Matrix anchors;
  // Clean keys: N second-view (or EMA/target) embeddings, 2N clean
  // embeddings for simclr/supclr.
  Matrix keys;
  const MemoryBank* bank = nullptr;  // moco only
  std::vector<int> labels;           // supclr (2N) / sup_npair (N)
  double tau = 0.1;
};

// i-Mix loss: anchor i was built as Mix(x_i, x_perm(i); lambda_i) and is
// scored against lambda_i v_i + (1 - lambda_i) v_perm(i). With the identity
// plan and anchors == keys (simclr/supclr) this is the base loss.
LossOutput imix(const ImixInputs& in, const MixPlan& plan, const ImixOptions& opts = {},
                LabelChoice choice = LabelChoice::mixed);

// Sum of per-anchor values in a fixed, order-independent sequence, divided by
// the count.
double order_free_mean(std::span<const double> values);

}  // namespace imix

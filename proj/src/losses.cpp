#include "imix/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "imix/errors.hpp"
#include "imix/linalg.hpp"

namespace imix {

namespace {

constexpr double kMassTol = 1e-9;

void require_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ConfigError("temperature tau must be positive, got " + std::to_string(tau));
  }
}

// Rows nonnegative with unit mass.
void require_distribution_rows(const Matrix& w, const char* what) {
  for (std::size_t i = 0; i < w.rows(); ++i) {
    double total = 0.0;
    for (double x : w.row(i)) {
      if (!(x >= 0.0) || !std::isfinite(x)) {
        throw LabelError(std::string(what) + ": row " + std::to_string(i) +
                         " has a negative or non-finite entry");
      }
      total += x;
    }
    if (std::abs(total - 1.0) > kMassTol) {
      throw LabelError(std::string(what) + ": row " + std::to_string(i) + " sums to " +
                       std::to_string(total) + ", expected 1");
    }
  }
}

// grad w.r.t. x from grad w.r.t. x / |x|.
void project_to_raw(Matrix& g, const NormalizedRows& n) {
  for (std::size_t r = 0; r < g.rows(); ++r) {
    auto gr = g.row(r);
    auto u = n.unit.row(r);
    const double radial = dot(gr, u);
    const double inv = 1.0 / n.norms[r];
    for (std::size_t c = 0; c < gr.size(); ++c) gr[c] = (gr[c] - radial * u[c]) * inv;
  }
}

// Softmax cross-entropy on given logits; G receives dloss_i/dlogit scaled by
// `scale`. Returns the per-row loss.
double softmax_ce_row(std::span<const double> logits, std::span<const double> w,
                      const std::uint8_t* allowed, std::span<double> g, double scale) {
  const std::size_t p = logits.size();
  double mx = -std::numeric_limits<double>::infinity();
  double mass = 0.0;
  for (std::size_t j = 0; j < p; ++j) {
    if (allowed && !allowed[j]) continue;
    mx = std::max(mx, logits[j]);
    mass += w[j];
  }
  if (mx == -std::numeric_limits<double>::infinity()) {
    throw LabelError("cross-entropy: anchor has no candidates");
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < p; ++j) {
    if (allowed && !allowed[j]) continue;
    sum += std::exp(logits[j] - mx);
  }
  const double lse = mx + std::log(sum);
  double loss = 0.0;
  for (std::size_t j = 0; j < p; ++j) {
    if (allowed && !allowed[j]) {
      g[j] = 0.0;
      continue;
    }
    if (w[j] != 0.0) loss -= w[j] * (logits[j] - lse);
    g[j] = (std::exp(logits[j] - lse) * mass - w[j]) * scale;
  }
  return loss;
}

}  // namespace

double order_free_mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  double total = 0.0;
  for (double v : sorted) total += v;
  return total / static_cast<double>(sorted.size());
}

LossOutput masked_ce(const Matrix& anchors, const Matrix& candidates, const VirtualLabels& w,
                     std::span<const std::uint8_t> allowed, double tau, bool keys_are_anchors,
                     bool want_key_grad) {
  require_tau(tau);
  const std::size_t m = anchors.rows();
  const std::size_t p = candidates.rows();
  if (m == 0) throw ShapeError("contrastive loss: no anchors");
  if (anchors.cols() != candidates.cols()) {
    throw ShapeError("contrastive loss: anchor dim " + std::to_string(anchors.cols()) +
                     " != candidate dim " + std::to_string(candidates.cols()));
  }
  if (w.rows() != m || w.cols() != p) {
    throw ShapeError("contrastive loss: labels are " + std::to_string(w.rows()) + "x" +
                     std::to_string(w.cols()) + ", expected " + std::to_string(m) + "x" +
                     std::to_string(p));
  }
  if (!allowed.empty() && allowed.size() != m * p) {
    throw ShapeError("contrastive loss: candidate mask has wrong size");
  }
  require_distribution_rows(w, "virtual label");
  if (!allowed.empty()) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < p; ++j)
        if (!allowed[i * p + j] && w(i, j) != 0.0) {
          throw LabelError("virtual label: anchor " + std::to_string(i) +
                           " puts mass on excluded candidate " + std::to_string(j));
        }
  }

  const NormalizedRows a = normalize_rows(anchors);
  const NormalizedRows k = keys_are_anchors ? a : normalize_rows(candidates);
  Matrix logits = matmul_nt(a.unit, k.unit);
  logits *= 1.0 / tau;

  LossOutput out;
  out.per_anchor.resize(m);
  Matrix g(m, p);
  const double scale = 1.0 / (tau * static_cast<double>(m));
  for (std::size_t i = 0; i < m; ++i) {
    const std::uint8_t* mask = allowed.empty() ? nullptr : allowed.data() + i * p;
    out.per_anchor[i] = softmax_ce_row(logits.row(i), w.row(i), mask, g.row(i), scale);
  }
  out.value = order_free_mean(out.per_anchor);

  Matrix ga = matmul(g, k.unit);
  if (keys_are_anchors) {
    ga += matmul_tn(g, a.unit);
    project_to_raw(ga, a);
  } else {
    project_to_raw(ga, a);
    if (want_key_grad) {
      Matrix gk = matmul_tn(g, a.unit);
      project_to_raw(gk, k);
      out.grad_keys = std::move(gk);
    }
  }
  out.grad_anchor = std::move(ga);
  return out;
}

LossOutput sup_ce(const Matrix& features, const Matrix& classifier, const Matrix& targets) {
  const std::size_t n = features.rows();
  if (features.cols() != classifier.rows()) {
    throw ShapeError("sup_ce: feature dim " + std::to_string(features.cols()) +
                     " != classifier rows " + std::to_string(classifier.rows()));
  }
  if (targets.rows() != n || targets.cols() != classifier.cols()) {
    throw ShapeError("sup_ce: targets must be n x C");
  }
  if (n == 0) throw ShapeError("sup_ce: empty batch");
  require_distribution_rows(targets, "sup_ce label");
  const Matrix logits = matmul(features, classifier);
  Matrix g(n, classifier.cols());
  LossOutput out;
  out.per_anchor.resize(n);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.per_anchor[i] = softmax_ce_row(logits.row(i), targets.row(i), nullptr, g.row(i), scale);
  }
  out.value = order_free_mean(out.per_anchor);
  out.grad_anchor = matmul_nt(g, classifier);
  out.grad_keys = matmul_tn(features, g);
  return out;
}

LossOutput mixup_sup(const Matrix& x_i, const Matrix& y_i, const Matrix& x_j, const Matrix& y_j,
                     double lambda, const Matrix& classifier) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("mixup_sup: lambda must be in [0,1]");
  require_same_shape(x_i, x_j, "mixup_sup inputs");
  require_same_shape(y_i, y_j, "mixup_sup labels");
  return sup_ce(lambda * x_i + (1.0 - lambda) * x_j, classifier,
                lambda * y_i + (1.0 - lambda) * y_j);
}

LossOutput npair(const Matrix& anchors, const Matrix& keys, const VirtualLabels& v, double tau) {
  if (anchors.rows() != keys.rows()) throw ShapeError("npair: anchors and keys differ in count");
  return masked_ce(anchors, keys, v, {}, tau, false, true);
}

namespace {

std::vector<std::uint8_t> no_self_mask(std::size_t n) {
  std::vector<std::uint8_t> mask(n * n, 1);
  for (std::size_t i = 0; i < n; ++i) mask[i * n + i] = 0;
  return mask;
}

void require_even(const Matrix& f, const char* what) {
  if (f.rows() < 2 || f.rows() % 2 != 0) {
    throw ShapeError(std::string(what) + ": expected 2N rows, got " + std::to_string(f.rows()));
  }
}

}  // namespace

LossOutput simclr(const Matrix& f, const VirtualLabels& v, double tau) {
  require_even(f, "simclr");
  const auto mask = no_self_mask(f.rows());
  return masked_ce(f, f, v, mask, tau, true, false);
}

LossOutput moco(const Matrix& anchors, const Matrix& ema_keys, const MemoryBank& bank,
                const VirtualLabels& v, double tau) {
  const std::size_t n = anchors.rows();
  if (ema_keys.rows() != n) throw ShapeError("moco: anchors and keys differ in count");
  const std::size_t k = bank.size();
  if (v.rows() != n || v.cols() != n + k) {
    throw ShapeError("moco: labels must be N x (N + K) = " + std::to_string(n) + "x" +
                     std::to_string(n + k));
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = n; j < n + k; ++j)
      if (v(i, j) != 0.0) {
        throw LabelError("moco: virtual label of anchor " + std::to_string(i) +
                         " puts mass on memory entry " + std::to_string(j - n));
      }
  if (k > 0 && bank.dim() != ema_keys.cols()) throw ShapeError("moco: bank dim mismatch");
  const Matrix candidates = k > 0 ? vstack(ema_keys, bank.ordered()) : ema_keys;
  return masked_ce(anchors, candidates, v, {}, tau, false, false);
}

LossOutput byol(const Matrix& predictions, const Matrix& targets, const VirtualLabels& v) {
  const std::size_t n = predictions.rows();
  require_same_shape(predictions, targets, "byol predictions/targets");
  if (n == 0) throw ShapeError("byol: empty batch");
  if (v.rows() != n || v.cols() != n) throw ShapeError("byol: labels must be N x N");
  require_distribution_rows(v, "byol label");
  const NormalizedRows p = normalize_rows(predictions);
  const NormalizedRows t = normalize_rows(targets);
  const Matrix mixed = matmul(v, t.unit);
  LossOutput out;
  out.per_anchor.resize(n);
  Matrix g(n, predictions.cols());
  const double scale = 2.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    double loss = 0.0;
    auto pi = p.unit.row(i);
    auto ti = mixed.row(i);
    for (std::size_t c = 0; c < pi.size(); ++c) {
      const double d = pi[c] - ti[c];
      loss += d * d;
      g(i, c) = scale * d;
    }
    out.per_anchor[i] = loss;
  }
  out.value = order_free_mean(out.per_anchor);
  project_to_raw(g, p);
  out.grad_anchor = std::move(g);
  return out;
}

VirtualLabels identity_labels(std::size_t n) { return Matrix::identity(n); }

VirtualLabels simclr_labels(std::size_t n) {
  Matrix v(2 * n, 2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    v(i, i + n) = 1.0;
    v(i + n, i) = 1.0;
  }
  return v;
}

VirtualLabels moco_labels(std::size_t n, std::size_t bank_size) {
  Matrix v(n, n + bank_size);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;
  return v;
}

VirtualLabels class_labels(std::span<const int> anchor_labels, std::span<const int> key_labels,
                           std::span<const std::uint8_t> allowed) {
  const std::size_t m = anchor_labels.size();
  const std::size_t p = key_labels.size();
  if (!allowed.empty() && allowed.size() != m * p) throw ShapeError("class_labels: mask size");
  Matrix v(m, p);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t count = 0;
    for (std::size_t j = 0; j < p; ++j) {
      if (!allowed.empty() && !allowed[i * p + j]) continue;
      if (key_labels[j] == anchor_labels[i]) {
        v(i, j) = 1.0;
        ++count;
      }
    }
    if (count == 0) {
      throw LabelError("supervised contrastive: anchor " + std::to_string(i) + " (class " +
                       std::to_string(anchor_labels[i]) + ") has no positive candidate");
    }
    const double inv = 1.0 / static_cast<double>(count);
    for (double& x : v.row(i)) x *= inv;
  }
  return v;
}

LossOutput supclr(const Matrix& f, std::span<const int> labels, double tau) {
  require_even(f, "supclr");
  if (labels.size() != f.rows()) throw ShapeError("supclr: need one label per row");
  const auto mask = no_self_mask(f.rows());
  return masked_ce(f, f, class_labels(labels, labels, mask), mask, tau, true, false);
}

LossOutput sup_npair(const Matrix& anchors, const Matrix& keys, std::span<const int> labels,
                     double tau) {
  if (anchors.rows() != keys.rows()) throw ShapeError("sup_npair: anchors and keys differ");
  if (labels.size() != anchors.rows()) throw ShapeError("sup_npair: need one label per row");
  return masked_ce(anchors, keys, class_labels(labels, labels, {}), {}, tau, false, true);
}

std::string_view method_name(Method m) {
  switch (m) {
    case Method::npair: return "npair";
    case Method::simclr: return "simclr";
    case Method::moco: return "moco";
    case Method::byol: return "byol";
    case Method::supclr: return "supclr";
    case Method::sup_npair: return "sup_npair";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::npair, Method::simclr, Method::moco, Method::byol, Method::supclr,
                   Method::sup_npair}) {
    if (method_name(m) == name) return m;
  }
  throw ConfigError("unknown method '" + std::string(name) +
                    "' (expected npair, simclr, moco, byol, supclr, sup_npair)");
}

MixPlan MixPlan::identity(std::size_t n) {
  MixPlan p;
  p.perm.resize(n);
  for (std::size_t i = 0; i < n; ++i) p.perm[i] = i;
  p.lambda.assign(n, 1.0);
  return p;
}

MixPlan MixPlan::uniform(std::vector<std::size_t> perm, double lambda) {
  MixPlan p;
  p.lambda.assign(perm.size(), lambda);
  p.perm = std::move(perm);
  return p;
}

void MixPlan::validate() const {
  if (perm.size() != lambda.size()) throw ConfigError("mix plan: perm/lambda length mismatch");
  std::vector<std::uint8_t> seen(perm.size(), 0);
  for (std::size_t v : perm) {
    if (v >= perm.size() || seen[v]) throw ConfigError("mix plan: perm is not a permutation");
    seen[v] = 1;
  }
  for (double l : lambda)
    if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("mix plan: lambda outside [0,1]");
}

namespace {

double weight_for(LabelChoice choice, double lambda) {
  switch (choice) {
    case LabelChoice::mixed: return lambda;
    case LabelChoice::principal: return 1.0;
    case LabelChoice::partner: return 0.0;
  }
  return lambda;
}

// Row i <- a * base(src_i) + (1 - a) * base(partner_i), skipping the zero
// weight so the single-label cases copy the base row exactly.
void blend_row(std::span<double> dst, std::span<const double> principal,
               std::span<const double> partner, double a) {
  for (std::size_t j = 0; j < dst.size(); ++j) {
    if (a == 1.0) {
      dst[j] = principal[j];
    } else if (a == 0.0) {
      dst[j] = partner[j];
    } else {
      dst[j] = a * principal[j] + (1.0 - a) * partner[j];
    }
  }
}

}  // namespace

LossOutput imix(const ImixInputs& in, const MixPlan& plan, const ImixOptions& opts,
                LabelChoice choice) {
  plan.validate();
  const std::size_t n = plan.size();
  if (n == 0) throw ShapeError("imix: empty batch");

  switch (in.method) {
    case Method::npair:
    case Method::sup_npair:
    case Method::moco:
    case Method::byol: {
      if (in.anchors.rows() != n || in.keys.rows() != n) {
        throw ShapeError("imix: expected " + std::to_string(n) + " anchors and keys, got " +
                         std::to_string(in.anchors.rows()) + " and " +
                         std::to_string(in.keys.rows()));
      }
      const std::size_t bank_k =
          in.method == Method::moco ? (in.bank ? in.bank->size() : 0) : 0;
      if (in.method == Method::moco && !in.bank) throw UsageError("imix: moco needs a memory bank");
      Matrix base;
      if (in.method == Method::sup_npair) {
        if (in.labels.size() != n) throw ShapeError("imix: sup_npair needs N class labels");
        base = class_labels(in.labels, in.labels, {});
      } else {
        base = moco_labels(n, bank_k);
      }
      Matrix v(n, base.cols());
      for (std::size_t i = 0; i < n; ++i) {
        blend_row(v.row(i), base.row(i), base.row(plan.perm[i]),
                  weight_for(choice, plan.lambda[i]));
      }
      switch (in.method) {
        case Method::moco: return moco(in.anchors, in.keys, *in.bank, v, in.tau);
        case Method::byol: return byol(in.anchors, in.keys, v);
        default: return masked_ce(in.anchors, in.keys, v, {}, in.tau, false, true);
      }
    }
    case Method::simclr:
    case Method::supclr: {
      const std::size_t m = 2 * n;
      if (in.anchors.rows() != m || in.keys.rows() != m) {
        throw ShapeError("imix: expected " + std::to_string(m) + " anchors and candidates");
      }
      if (in.method == Method::supclr && in.labels.size() != m) {
        throw ShapeError("imix: supclr needs 2N class labels");
      }
      std::vector<std::uint8_t> allowed(m * m, 1);
      std::vector<std::size_t> principal(m), partner(m);
      std::vector<double> lam(m);
      for (std::size_t r = 0; r < m; ++r) {
        const std::size_t half = r < n ? 0 : n;
        principal[r] = r;
        partner[r] = plan.perm[r - half] + half;
        lam[r] = plan.lambda[r - half];
        // The anchor's own clean copy leaves the candidates; at lambda = 0
        // the anchor is its partner, so the partner leaves instead.
        if (lam[r] > 0.0) {
          allowed[r * m + principal[r]] = 0;
        } else {
          allowed[r * m + partner[r]] = 0;
        }
        if (opts.exclude_partner && lam[r] < 1.0) allowed[r * m + partner[r]] = 0;
      }
      Matrix v(m, m);
      if (in.method == Method::simclr) {
        for (std::size_t r = 0; r < m; ++r) {
          const double a = weight_for(choice, lam[r]);
          const std::size_t pos_i = (principal[r] + n) % m;
          const std::size_t pos_j = (partner[r] + n) % m;
          if (a != 0.0) v(r, pos_i) += a;
          if (a != 1.0) v(r, pos_j) += 1.0 - a;
        }
      } else {
        for (std::size_t r = 0; r < m; ++r) {
          const std::span<const std::uint8_t> row_mask(allowed.data() + r * m, m);
          const int yi = in.labels[principal[r]];
          const int yj = in.labels[partner[r]];
          const Matrix bi = class_labels(std::span<const int>(&yi, 1), in.labels, row_mask);
          const Matrix bj = class_labels(std::span<const int>(&yj, 1), in.labels, row_mask);
          blend_row(v.row(r), bi.row(0), bj.row(0), weight_for(choice, lam[r]));
        }
      }
      return masked_ce(in.anchors, in.keys, v, allowed, in.tau, false, true);
    }
  }
  throw UsageError("imix: unknown method");
}

}  // namespace imix

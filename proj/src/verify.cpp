#include "imix/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>

#include "imix/errors.hpp"
#include "imix/eval.hpp"
#include "imix/kernels.hpp"
#include "imix/linalg.hpp"
#include "imix/losses.hpp"
#include "imix/memory_bank.hpp"
#include "imix/nn.hpp"
#include "imix/rng.hpp"

namespace imix {

namespace {

constexpr double kLinearityTol = 1e-12;
constexpr double kGradTol = 1e-4;
// Gradients smaller than this count as zero (e.g. a bias feeding batch norm).
constexpr double kGradFloor = 1e-6;
constexpr double kOracleTol = 1e-10;
constexpr double kFedTol = 1e-8;
constexpr double kKernelTol = 1e-12;

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << std::scientific << v;
  return s.str();
}

struct Tracker {
  VerifyCheck& check;

  void observe(double err, double tol, const std::string& what) {
    ++check.cases;
    if (std::isnan(err)) err = std::numeric_limits<double>::infinity();
    check.worst = std::max(check.worst, err);
    if (!(err <= tol) && check.passed) {
      check.passed = false;
      check.detail = what + ": error " + fmt(err) + " exceeds " + fmt(tol);
    }
  }
  void require(bool ok, const std::string& what) {
    ++check.cases;
    if (!ok && check.passed) {
      check.passed = false;
      check.detail = what;
    }
  }
};

Matrix randn(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.uniform_index(hi - lo + 1); }

std::vector<int> random_classes(Rng& rng, std::size_t n, std::size_t classes) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.uniform_index(classes));
  return y;
}

MixPlan random_plan(Rng& rng, std::size_t n, bool per_sample) {
  MixPlan plan = MixPlan::uniform(rng.permutation(n), rng.uniform(0.05, 0.95));
  if (per_sample) {
    for (double& l : plan.lambda) l = rng.uniform(0.05, 0.95);
  }
  return plan;
}

std::vector<double> flat(const Matrix& m) { return {m.data(), m.data() + m.size()}; }

// Central differences of f with respect to every entry of x.
std::vector<double> numeric_grad(Matrix& x, const std::function<double()>& f, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x.data()[i];
    x.data()[i] = orig + h;
    const double fp = f();
    x.data()[i] = orig - h;
    const double fm = f();
    x.data()[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Straight-loop reference implementations. Nothing here goes through the
// library's vectorised paths.
namespace ref {

double cosine(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    ab += a(i, c) * b(j, c);
    aa += a(i, c) * a(i, c);
    bb += b(j, c) * b(j, c);
  }
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

// -sum_j w_j log softmax_j(z) over the listed candidates.
double ce(const std::vector<double>& z, const std::vector<double>& w) {
  double denom = 0.0;
  for (double v : z) denom += std::exp(v);
  double loss = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) loss -= w[j] * (z[j] - std::log(denom));
  return loss;
}

// Contrastive CE for anchor i of a against the candidate rows `cand` of b.
double anchor_ce(const Matrix& a, std::size_t i, const Matrix& b, const std::vector<std::size_t>& cand,
                 const std::vector<double>& w, double tau) {
  std::vector<double> z;
  for (std::size_t j : cand) z.push_back(cosine(a, i, b, j) / tau);
  return ce(z, w);
}

std::vector<std::size_t> all(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

std::vector<std::size_t> all_but(std::size_t n, std::size_t skip) {
  std::vector<std::size_t> v;
  for (std::size_t i = 0; i < n; ++i)
    if (i != skip) v.push_back(i);
  return v;
}

double sup_ce(const Matrix& f, const Matrix& w, const Matrix& y) {
  double total = 0.0;
  for (std::size_t i = 0; i < f.rows(); ++i) {
    std::vector<double> z(w.cols(), 0.0), t(w.cols());
    for (std::size_t c = 0; c < w.cols(); ++c) {
      for (std::size_t d = 0; d < f.cols(); ++d) z[c] += f(i, d) * w(d, c);
      t[c] = y(i, c);
    }
    total += ce(z, t);
  }
  return total / static_cast<double>(f.rows());
}

// Anchor i scored against all N keys with weight lam on key p and 1 - lam on
// key q.
double mixed_npair(const Matrix& a, const Matrix& k, std::span<const std::size_t> perm,
                   std::span<const double> lam, double tau) {
  const std::size_t n = a.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> w(n, 0.0);
    w[i] += lam[i];
    w[perm[i]] += 1.0 - lam[i];
    total += anchor_ce(a, i, k, all(n), w, tau);
  }
  return total / static_cast<double>(n);
}

double mixed_moco(const Matrix& q, const Matrix& k, const Matrix& bank,
                  std::span<const std::size_t> perm, std::span<const double> lam, double tau) {
  const std::size_t n = q.rows();
  const Matrix cand = vstack(k, bank);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> w(cand.rows(), 0.0);
    w[i] += lam[i];
    w[perm[i]] += 1.0 - lam[i];
    total += anchor_ce(q, i, cand, all(cand.rows()), w, tau);
  }
  return total / static_cast<double>(n);
}

double mixed_byol(const Matrix& p, const Matrix& t, std::span<const std::size_t> perm,
                  std::span<const double> lam) {
  const std::size_t n = p.rows(), d = p.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double pn = 0.0, ti = 0.0, tj = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      pn += p(i, c) * p(i, c);
      ti += t(i, c) * t(i, c);
      tj += t(perm[i], c) * t(perm[i], c);
    }
    double loss = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double target = lam[i] * t(i, c) / std::sqrt(ti) + (1.0 - lam[i]) * t(perm[i], c) / std::sqrt(tj);
      const double diff = p(i, c) / std::sqrt(pn) - target;
      loss += diff * diff;
    }
    total += loss;
  }
  return total / static_cast<double>(n);
}

// SimCLR over 2N anchors: clean copy (or, at lambda 0, the partner) removed;
// weight lam on the principal's other view, 1 - lam on the partner's.
double mixed_simclr(const Matrix& a, const Matrix& f, std::span<const std::size_t> perm,
                    std::span<const double> lam, double tau, bool exclude_partner,
                    const std::vector<int>* labels) {
  const std::size_t m = f.rows(), n = m / 2;
  double total = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t half = r < n ? 0 : n;
    const std::size_t i = r, j = perm[r - half] + half;
    const double l = lam[r - half];
    std::vector<std::size_t> cand;
    for (std::size_t c = 0; c < m; ++c) {
      const bool drop = (l > 0.0 && c == i) || (l == 0.0 && c == j) ||
                        (exclude_partner && l < 1.0 && c == j);
      if (!drop) cand.push_back(c);
    }
    std::vector<double> w(cand.size(), 0.0);
    if (!labels) {
      for (std::size_t c = 0; c < cand.size(); ++c) {
        if (cand[c] == (i + n) % m) w[c] += l;
        if (cand[c] == (j + n) % m) w[c] += 1.0 - l;
      }
    } else {
      double ni = 0.0, nj = 0.0;
      for (std::size_t c : cand) {
        ni += (*labels)[c] == (*labels)[i];
        nj += (*labels)[c] == (*labels)[j];
      }
      for (std::size_t c = 0; c < cand.size(); ++c) {
        if ((*labels)[cand[c]] == (*labels)[i]) w[c] += l / ni;
        if ((*labels)[cand[c]] == (*labels)[j]) w[c] += (1.0 - l) / nj;
      }
    }
    total += anchor_ce(a, r, f, cand, w, tau);
  }
  return total / static_cast<double>(m);
}

double mixed_sup_npair(const Matrix& a, const Matrix& k, const std::vector<int>& y,
                       std::span<const std::size_t> perm, std::span<const double> lam, double tau) {
  const std::size_t n = a.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double ni = 0.0, nj = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      ni += y[c] == y[i];
      nj += y[c] == y[perm[i]];
    }
    std::vector<double> w(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
      if (y[c] == y[i]) w[c] += lam[i] / ni;
      if (y[c] == y[perm[i]]) w[c] += (1.0 - lam[i]) / nj;
    }
    total += anchor_ce(a, i, k, all(n), w, tau);
  }
  return total / static_cast<double>(n);
}

// Supervised contrastive over 2N with the anchor itself removed.
double supclr(const Matrix& f, const std::vector<int>& y, double tau) {
  const std::size_t m = f.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto cand = all_but(m, i);
    double pos = 0.0;
    for (std::size_t c : cand) pos += y[c] == y[i];
    std::vector<double> w;
    for (std::size_t c : cand) w.push_back(y[c] == y[i] ? 1.0 / pos : 0.0);
    total += anchor_ce(f, i, f, cand, w, tau);
  }
  return total / static_cast<double>(m);
}

double simclr(const Matrix& f, double tau) {
  const std::size_t m = f.rows(), n = m / 2;
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto cand = all_but(m, i);
    std::vector<double> w;
    for (std::size_t c : cand) w.push_back(c == (i + n) % m ? 1.0 : 0.0);
    total += anchor_ce(f, i, f, cand, w, tau);
  }
  return total / static_cast<double>(m);
}

}  // namespace ref

std::vector<std::size_t> identity_perm(std::size_t n) { return ref::all(n); }

// ---------------------------------------------------------------------------
// Checks.

void check_linearity(Tracker& t, const VerifyOptions& o) {
  Rng rng = Rng(o.seed).child(1);
  const Method methods[] = {Method::npair, Method::simclr, Method::moco, Method::supclr,
                            Method::sup_npair};
  for (Method method : methods) {
    for (std::size_t inst = 0; inst < o.linearity_instances; ++inst) {
      const std::size_t n = pick(rng, 2, 6), d = pick(rng, 2, 6);
      const bool two_views = method == Method::simclr || method == Method::supclr;
      const std::size_t rows = two_views ? 2 * n : n;
      ImixInputs in;
      in.method = method;
      in.anchors = randn(rng, rows, d);
      in.keys = randn(rng, rows, d);
      in.tau = rng.uniform(0.05, 1.0);
      std::optional<MemoryBank> bank;
      if (method == Method::moco) {
        bank.emplace(pick(rng, 0, 6), d, rng);
        in.bank = &*bank;
      }
      if (method == Method::sup_npair) in.labels = random_classes(rng, n, pick(rng, 1, n));
      if (method == Method::supclr) {
        const std::vector<int> y = random_classes(rng, n, pick(rng, 1, n));
        in.labels = y;
        in.labels.insert(in.labels.end(), y.begin(), y.end());
      }
      const MixPlan plan = random_plan(rng, n, inst % 2 == 1);
      const ImixOptions opts{inst % 3 == 0};
      const LossOutput mixed = imix(in, plan, opts, LabelChoice::mixed);
      const LossOutput li = imix(in, plan, opts, LabelChoice::principal);
      const LossOutput lj = imix(in, plan, opts, LabelChoice::partner);
      const std::string what = std::string(method_name(method)) + " instance " + std::to_string(inst);
      double err = 0.0;
      for (std::size_t r = 0; r < mixed.per_anchor.size(); ++r) {
        const double l = plan.lambda[r % n];
        const double expect = l * li.per_anchor[r] + (1.0 - l) * lj.per_anchor[r];
        err = std::max(err, std::abs(mixed.per_anchor[r] + o.linearity_perturbation - expect));
      }
      if (plan.lambda.front() == plan.lambda.back() &&
          std::all_of(plan.lambda.begin(), plan.lambda.end(),
                      [&](double l) { return l == plan.lambda.front(); })) {
        const double l = plan.lambda.front();
        err = std::max(err, std::abs(mixed.value + o.linearity_perturbation -
                                     (l * li.value + (1.0 - l) * lj.value)));
      }
      t.observe(err, kLinearityTol, what);
    }
  }
}

void check_byol_identity(Tracker& t, const VerifyOptions& o) {
  Rng rng = Rng(o.seed).child(2);
  for (std::size_t inst = 0; inst < o.linearity_instances; ++inst) {
    const std::size_t n = pick(rng, 2, 6), d = pick(rng, 2, 6);
    ImixInputs in;
    in.method = Method::byol;
    in.anchors = randn(rng, n, d);
    in.keys = randn(rng, n, d);
    const MixPlan plan = random_plan(rng, n, inst % 2 == 1);
    const LossOutput mixed = imix(in, plan, {}, LabelChoice::mixed);
    const LossOutput li = imix(in, plan, {}, LabelChoice::principal);
    const LossOutput lj = imix(in, plan, {}, LabelChoice::partner);
    const Matrix u = normalize_rows(in.keys).unit;
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double l = plan.lambda[i];
      double sq = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double v = l * u(i, c) + (1.0 - l) * u(plan.perm[i], c);
        sq += v * v;
      }
      const double gap = mixed.per_anchor[i] + o.linearity_perturbation -
                         (l * li.per_anchor[i] + (1.0 - l) * lj.per_anchor[i]);
      err = std::max(err, std::abs(gap - (sq - 1.0)));
    }
    t.observe(err, kLinearityTol, "byol instance " + std::to_string(inst));
  }
}

void grad_case(Tracker& t, const std::string& what, Matrix& x, const Matrix& analytic,
               const std::function<double()>& f, double floor = 0.0) {
  t.observe(gradient_rel_error(flat(analytic), numeric_grad(x, f), floor), kGradTol, what);
}

// Floor for tensors whose exact gradient vanishes: a fixed fraction of the
// largest gradient entry of the same objective.
double zero_floor(const std::vector<Matrix>& grads) {
  double m = 0.0;
  for (const Matrix& g : grads) m = std::max(m, max_abs(g));
  return 1e-2 * m;
}

void check_loss_gradients(Tracker& t, const VerifyOptions& o) {
  Rng rng = Rng(o.seed).child(3);
  for (std::size_t inst = 0; inst < o.gradient_instances; ++inst) {
    const std::string tag = " instance " + std::to_string(inst);
    const std::size_t n = pick(rng, 2, 5), d = pick(rng, 2, 5), c = pick(rng, 2, 4);
    const double tau = rng.uniform(0.2, 1.0);
    Matrix a = randn(rng, n, d), k = randn(rng, n, d);
    Matrix f2 = randn(rng, 2 * n, d), k2 = randn(rng, 2 * n, d);
    std::vector<int> y = random_classes(rng, n, pick(rng, 1, n));
    std::vector<int> y2 = y;
    y2.insert(y2.end(), y.begin(), y.end());
    const MixPlan plan = random_plan(rng, n, inst % 2 == 1);
    MemoryBank bank(pick(rng, 0, 5), d, rng);

    {  // sup_ce on features and classifier
      Matrix w = randn(rng, d, c);
      Matrix targets(n, c);
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += targets(i, j) = rng.uniform();
        for (std::size_t j = 0; j < c; ++j) targets(i, j) /= s;
      }
      const LossOutput out = sup_ce(a, w, targets);
      grad_case(t, "sup_ce features" + tag, a, out.grad_anchor,
                [&] { return sup_ce(a, w, targets).value; });
      grad_case(t, "sup_ce classifier" + tag, w, *out.grad_keys,
                [&] { return sup_ce(a, w, targets).value; });
    }
    {
      const LossOutput out = npair(a, k, identity_labels(n), tau);
      grad_case(t, "npair anchors" + tag, a, out.grad_anchor,
                [&] { return npair(a, k, identity_labels(n), tau).value; });
      grad_case(t, "npair keys" + tag, k, *out.grad_keys,
                [&] { return npair(a, k, identity_labels(n), tau).value; });
    }
    {
      const LossOutput out = simclr(f2, simclr_labels(n), tau);
      grad_case(t, "simclr" + tag, f2, out.grad_anchor,
                [&] { return simclr(f2, simclr_labels(n), tau).value; });
    }
    {
      const LossOutput out = supclr(f2, y2, tau);
      grad_case(t, "supclr" + tag, f2, out.grad_anchor, [&] { return supclr(f2, y2, tau).value; });
    }
    {
      const LossOutput out = sup_npair(a, k, y, tau);
      grad_case(t, "sup_npair anchors" + tag, a, out.grad_anchor,
                [&] { return sup_npair(a, k, y, tau).value; });
      grad_case(t, "sup_npair keys" + tag, k, *out.grad_keys,
                [&] { return sup_npair(a, k, y, tau).value; });
    }
    {
      const Matrix kk = normalize_rows(k).unit;
      const LossOutput out = moco(a, kk, bank, moco_labels(n, bank.size()), tau);
      t.require(!out.grad_keys, "moco exposes a key gradient" + tag);
      grad_case(t, "moco anchors" + tag, a, out.grad_anchor,
                [&] { return moco(a, kk, bank, moco_labels(n, bank.size()), tau).value; });
    }
    {
      const LossOutput out = byol(a, k, identity_labels(n));
      t.require(!out.grad_keys, "byol exposes a target gradient" + tag);
      grad_case(t, "byol predictions" + tag, a, out.grad_anchor,
                [&] { return byol(a, k, identity_labels(n)).value; });
    }
    // i-Mix wrappers with a random plan.
    for (Method m : {Method::npair, Method::sup_npair, Method::moco, Method::byol, Method::simclr,
                     Method::supclr}) {
      const bool two_views = m == Method::simclr || m == Method::supclr;
      ImixInputs in;
      in.method = m;
      in.tau = tau;
      in.anchors = two_views ? f2 : a;
      in.keys = two_views ? k2 : (m == Method::moco ? normalize_rows(k).unit : k);
      in.bank = &bank;
      if (m == Method::sup_npair) in.labels = y;
      if (m == Method::supclr) in.labels = y2;
      const ImixOptions opts{inst % 3 == 0};
      const LossOutput out = imix(in, plan, opts);
      const std::string name = "imix " + std::string(method_name(m));
      grad_case(t, name + " anchors" + tag, in.anchors, out.grad_anchor,
                [&] { return imix(in, plan, opts).value; });
      if (out.grad_keys) {
        grad_case(t, name + " keys" + tag, in.keys, *out.grad_keys,
                  [&] { return imix(in, plan, opts).value; });
      }
    }
  }
}

std::vector<LayerSpec> random_layers(Rng& rng, std::size_t in_dim) {
  std::vector<LayerSpec> specs;
  const std::size_t depth = pick(rng, 1, 3);
  std::size_t dim = in_dim;
  for (std::size_t l = 0; l < depth; ++l) {
    LayerSpec s;
    s.in_dim = dim;
    switch (rng.uniform_index(3)) {
      case 0: s.activation = Activation::relu; break;
      case 1: s.activation = Activation::maxout; s.maxout_sets = pick(rng, 2, 3); break;
      default: s.activation = Activation::identity; break;
    }
    const std::size_t eff = pick(rng, 2, 4);
    s.out_dim = s.activation == Activation::maxout ? eff * s.maxout_sets : eff;
    s.batch_norm = rng.uniform() < 0.5;
    specs.push_back(s);
    dim = s.effective_out();
  }
  return specs;
}

void check_layer_gradients(Tracker& t, const VerifyOptions& o) {
  Rng rng = Rng(o.seed).child(4);
  for (std::size_t inst = 0; inst < o.gradient_instances; ++inst) {
    const std::string tag = " instance " + std::to_string(inst);
    const std::size_t n = pick(rng, 3, 6), d = pick(rng, 2, 4);
    Mlp net(random_layers(rng, d), rng);
    for (DenseLayer& layer : net.mutable_layers()) {
      // Nonzero biases keep maxout slots fed by dead ReLUs off exact ties.
      for (std::size_t j = 0; j < layer.bias.size(); ++j) layer.bias.data()[j] = rng.normal();
      if (!layer.spec.batch_norm) continue;
      for (std::size_t j = 0; j < layer.gamma.size(); ++j) {
        layer.gamma.data()[j] = rng.uniform(0.5, 1.5);
        layer.beta.data()[j] = rng.normal();
        layer.running_mean.data()[j] = rng.normal();
        layer.running_var.data()[j] = rng.uniform(0.5, 2.0);
      }
    }
    net.bump_version();
    const Mode mode = inst % 2 == 0 ? Mode::train : Mode::eval;
    Matrix x = randn(rng, n, d);
    const Matrix r = randn(rng, n, net.out_dim());
    auto objective = [&] {
      const Matrix out = net.forward(x, mode, nullptr, false);
      double s = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) s += out.data()[i] * r.data()[i];
      return s;
    };
    ForwardCache cache;
    net.forward(x, mode, &cache, false);
    std::vector<Matrix> grads = net.zero_grads();
    const Matrix gx = net.backward(cache, r, grads);
    const std::string mode_name = mode == Mode::train ? " train" : " eval";
    grad_case(t, "mlp input" + mode_name + tag, x, gx, objective);
    const auto params = net.parameters();
    const auto names = net.parameter_names("mlp");
    const double floor = zero_floor(grads);
    for (std::size_t p = 0; p < params.size(); ++p) {
      grad_case(t, names[p] + mode_name + tag, *params[p], grads[p], objective, floor);
    }
  }

  // Whole encoder with prediction head, through the public forward/backward.
  for (std::size_t inst = 0; inst < std::max<std::size_t>(1, o.gradient_instances / 10); ++inst) {
    EncoderSpec spec;
    spec.input_dim = 3;
    spec.backbone = mlp_backbone(3, 4, 2, true);
    spec.proj_hidden = 4;
    spec.proj_out = 3;
    spec.predictor = true;
    spec.pred_hidden = 4;
    EncoderState state = make_encoder(spec, rng);
    {
      const auto params = state.parameters();
      const auto names = state.parameter_names();
      for (std::size_t p = 0; p < params.size(); ++p) {
        if (!names[p].ends_with("bias")) continue;
        for (std::size_t j = 0; j < params[p]->size(); ++j) params[p]->data()[j] = rng.normal();
      }
    }
    const Matrix x = randn(rng, 5, 3);
    const Matrix r = randn(rng, 5, 3);
    auto objective = [&] {
      const Matrix p = predict_head(state, forward(state, x, Mode::train));
      double s = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) s += p.data()[i] * r.data()[i];
      return s;
    };
    EncoderCache cache;
    predict_head(state, forward(state, x, Mode::train, &cache), &cache);
    std::vector<Matrix> grads = state.zero_grads();
    backward(state, cache, r, grads);
    const auto params = state.parameters();
    const auto names = state.parameter_names();
    const double floor = zero_floor(grads);
    for (std::size_t p = 0; p < params.size(); ++p) {
      grad_case(t, names[p] + " encoder instance " + std::to_string(inst), *params[p], grads[p],
                objective, floor);
    }
  }
}

void check_reductions(Tracker& t, const VerifyOptions& o) {
  Rng rng = Rng(o.seed).child(5);
  auto same = [&](const LossOutput& a, const LossOutput& b, const std::string& what, bool grads) {
    bool ok = a.value == b.value;
    if (grads) {
      ok = ok && max_abs_diff(a.grad_anchor, b.grad_anchor) == 0.0;
      if (a.grad_keys && b.grad_keys) ok = ok && max_abs_diff(*a.grad_keys, *b.grad_keys) == 0.0;
    }
    t.require(ok, what + ": values differ");
  };
  for (std::size_t inst = 0; inst < 20; ++inst) {
    const std::string tag = " instance " + std::to_string(inst);
    const std::size_t n = pick(rng, 2, 6), d = pick(rng, 2, 5);
    const double tau = rng.uniform(0.05, 1.0);
    const Matrix a = randn(rng, n, d), k = randn(rng, n, d), kk = normalize_rows(k).unit;
    const Matrix f = randn(rng, 2 * n, d);
    std::vector<int> y = random_classes(rng, n, pick(rng, 1, n));
    std::vector<int> y2 = y;
    y2.insert(y2.end(), y.begin(), y.end());
    MemoryBank bank(pick(rng, 1, 5), d, rng);
    const std::vector<std::size_t> perm = rng.permutation(n);

    auto inputs = [&](Method m, const Matrix& anchors, const Matrix& keys) {
      ImixInputs in;
      in.method = m;
      in.anchors = anchors;
      in.keys = keys;
      in.bank = &bank;
      in.tau = tau;
      if (m == Method::sup_npair) in.labels = y;
      if (m == Method::supclr) in.labels = y2;
      return in;
    };
    const MixPlan one = MixPlan::identity(n);
    const MixPlan zero = MixPlan::uniform(perm, 0.0);
    // anchors built entirely from the partner
    const Matrix a_perm = a.gather_rows(perm);
    std::vector<std::size_t> perm2(2 * n);
    for (std::size_t r = 0; r < 2 * n; ++r) perm2[r] = perm[r % n] + (r < n ? 0 : n);
    const Matrix f_perm = f.gather_rows(perm2);

    same(imix(inputs(Method::npair, a, k), one), npair(a, k, identity_labels(n), tau),
         "npair lambda=1" + tag, true);
    same(imix(inputs(Method::npair, a_perm, k), zero), npair(a, k, identity_labels(n), tau),
         "npair lambda=0" + tag, false);
    same(imix(inputs(Method::sup_npair, a, k), one), sup_npair(a, k, y, tau),
         "sup_npair lambda=1" + tag, true);
    same(imix(inputs(Method::sup_npair, a_perm, k), zero), sup_npair(a, k, y, tau),
         "sup_npair lambda=0" + tag, false);
    same(imix(inputs(Method::moco, a, kk), one), moco(a, kk, bank, moco_labels(n, bank.size()), tau),
         "moco lambda=1" + tag, true);
    same(imix(inputs(Method::moco, a_perm, kk), zero),
         moco(a, kk, bank, moco_labels(n, bank.size()), tau), "moco lambda=0" + tag, false);
    same(imix(inputs(Method::byol, a, k), one), byol(a, k, identity_labels(n)),
         "byol lambda=1" + tag, true);
    same(imix(inputs(Method::byol, a_perm, k), zero), byol(a, k, identity_labels(n)),
         "byol lambda=0" + tag, false);
    same(imix(inputs(Method::simclr, f, f), one), simclr(f, simclr_labels(n), tau),
         "simclr lambda=1" + tag, false);
    same(imix(inputs(Method::simclr, f_perm, f), zero), simclr(f, simclr_labels(n), tau),
         "simclr lambda=0" + tag, false);
    same(imix(inputs(Method::supclr, f, f), one), supclr(f, y2, tau), "supclr lambda=1" + tag, false);
    same(imix(inputs(Method::supclr, f_perm, f), zero), supclr(f, y2, tau),
         "supclr lambda=0" + tag, false);

    MemoryBank empty(0, d, rng);
    same(moco(a, kk, empty, moco_labels(n, 0), tau), npair(a, kk, identity_labels(n), tau),
         "moco without bank vs npair" + tag, false);
    const LossOutput m0 = moco(a, kk, empty, moco_labels(n, 0), tau);
    const LossOutput np = npair(a, kk, identity_labels(n), tau);
    t.require(max_abs_diff(m0.grad_anchor, np.grad_anchor) == 0.0,
              "moco without bank vs npair gradient" + tag);
    std::vector<int> distinct(n);
    for (std::size_t i = 0; i < n; ++i) distinct[i] = static_cast<int>(i);
    same(sup_npair(a, k, distinct, tau), npair(a, k, identity_labels(n), tau),
         "sup_npair single positive vs npair" + tag, true);
  }
}

void check_scalar_oracle(Tracker& t, const VerifyOptions& o) {
  Rng rng = Rng(o.seed).child(6);
  for (std::size_t inst = 0; inst < 12; ++inst) {
    const std::string tag = " fixture " + std::to_string(inst);
    const std::size_t n = pick(rng, 2, 4), d = pick(rng, 2, 4), c = pick(rng, 2, 4);
    const double tau = rng.uniform(0.1, 1.0);
    const Matrix a = randn(rng, n, d), k = randn(rng, n, d), kk = normalize_rows(k).unit;
    const Matrix f = randn(rng, 2 * n, d), f_clean = randn(rng, 2 * n, d);
    std::vector<int> y = random_classes(rng, n, pick(rng, 1, n));
    std::vector<int> y2 = y;
    y2.insert(y2.end(), y.begin(), y.end());
    MemoryBank bank(pick(rng, 1, 4), d, rng);
    const Matrix bank_rows = bank.ordered();
    const MixPlan plan = random_plan(rng, n, inst % 2 == 1);
    const MixPlan one = MixPlan::identity(n);
    const bool excl = inst % 3 == 0;

    auto obs = [&](double got, double want, const std::string& what) {
      t.observe(std::abs(got - want), kOracleTol, what + tag);
    };
    {
      const Matrix w = randn(rng, d, c);
      Matrix yi(n, c), yj(n, c);
      for (std::size_t i = 0; i < n; ++i) {
        yi(i, rng.uniform_index(c)) = 1.0;
        yj(i, rng.uniform_index(c)) = 1.0;
      }
      const double l = plan.lambda.front();
      obs(sup_ce(a, w, yi).value, ref::sup_ce(a, w, yi), "supervised cross-entropy");
      obs(mixup_sup(a, yi, k, yj, l, w).value, ref::sup_ce(l * a + (1.0 - l) * k, w, l * yi + (1.0 - l) * yj),
          "mixup");
    }
    ImixInputs in;
    in.tau = tau;
    auto run = [&](Method m, const Matrix& an, const Matrix& ke, const MixPlan& p) {
      in.method = m;
      in.anchors = an;
      in.keys = ke;
      in.bank = &bank;
      in.labels = m == Method::supclr ? y2 : y;
      return imix(in, p, ImixOptions{excl}).value;
    };
    const auto id = identity_perm(n);
    const std::vector<double> ones(n, 1.0);
    obs(npair(a, k, identity_labels(n), tau).value, ref::mixed_npair(a, k, id, ones, tau), "npair");
    obs(run(Method::npair, a, k, plan), ref::mixed_npair(a, k, plan.perm, plan.lambda, tau),
        "imix npair");
    obs(simclr(f, simclr_labels(n), tau).value, ref::simclr(f, tau), "simclr");
    obs(run(Method::simclr, f, f_clean, plan),
        ref::mixed_simclr(f, f_clean, plan.perm, plan.lambda, tau, excl, nullptr), "imix simclr");
    obs(moco(a, kk, bank, moco_labels(n, bank.size()), tau).value,
        ref::mixed_moco(a, kk, bank_rows, id, ones, tau), "moco");
    {
      // general label over the in-batch keys
      Matrix v(n, n + bank.size());
      for (std::size_t i = 0; i < n; ++i) {
        v(i, i) += 0.5;
        v(i, plan.perm[i]) += 0.5;
      }
      std::vector<double> half(n, 0.5);
      obs(moco(a, kk, bank, v, tau).value, ref::mixed_moco(a, kk, bank_rows, plan.perm, half, tau),
          "moco soft label");
    }
    obs(run(Method::moco, a, kk, plan), ref::mixed_moco(a, kk, bank_rows, plan.perm, plan.lambda, tau),
        "imix moco");
    obs(byol(a, k, identity_labels(n)).value, ref::mixed_byol(a, k, id, ones), "byol");
    obs(run(Method::byol, a, k, plan), ref::mixed_byol(a, k, plan.perm, plan.lambda), "imix byol");
    obs(supclr(f, y2, tau).value, ref::supclr(f, y2, tau), "supclr");
    obs(run(Method::supclr, f, f_clean, plan),
        ref::mixed_simclr(f, f_clean, plan.perm, plan.lambda, tau, excl, &y2), "imix supclr");
    obs(sup_npair(a, k, y, tau).value, ref::mixed_sup_npair(a, k, y, id, ones, tau), "sup_npair");
    obs(run(Method::sup_npair, a, k, plan),
        ref::mixed_sup_npair(a, k, y, plan.perm, plan.lambda, tau), "imix sup_npair");
    obs(run(Method::npair, a, k, one), ref::mixed_npair(a, k, id, ones, tau), "imix npair identity");
  }
}

void check_fed(Tracker& t, const VerifyOptions& o) {
  Rng rng = Rng(o.seed).child(7);
  for (std::size_t inst = 0; inst < 10; ++inst) {
    const Matrix x = randn(rng, pick(rng, 3, 20), pick(rng, 2, 6));
    t.observe(std::abs(fed(x, x)), kFedTol, "identical sets " + std::to_string(inst));
  }
  for (std::size_t d = 2; d <= 6; ++d) {
    Matrix a(2, d), b(2, d);
    a(0, 0) = a(1, 0) = 1.0;
    b(0, 1) = b(1, 1) = 1.0;
    t.observe(std::abs(fed(a, b) - 2.0), kFedTol, "single points e1, e2 in dim " + std::to_string(d));
  }
  for (std::size_t inst = 0; inst < 10; ++inst) {
    const std::size_t d = pick(rng, 1, 6);
    FedStats sa{std::vector<double>(d, 0.0), Matrix(d, d)};
    FedStats sb{std::vector<double>(d, 0.0), Matrix(d, d)};
    double want = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double va = rng.uniform(0.0, 2.0), vb = rng.uniform(0.0, 2.0);
      sa.cov(i, i) = va;
      sb.cov(i, i) = vb;
      sa.mean[i] = sb.mean[i] = rng.normal();
      want += (std::sqrt(va) - std::sqrt(vb)) * (std::sqrt(va) - std::sqrt(vb));
    }
    t.observe(std::abs(fed(sa, sb) - want), kFedTol, "diagonal closed form " + std::to_string(inst));
  }
}

void check_kernels(Tracker& t, const VerifyOptions& o) {
  using namespace kernels;
  if (!isa_supported(Isa::avx2)) {
    t.require(true, "");
    t.check.detail = "avx2 not available on this machine; scalar only";
    return;
  }
  const KernelTable& s = scalar_table();
  const KernelTable& v = table(Isa::avx2);
  Rng rng = Rng(o.seed).child(8);
  for (std::size_t inst = 0; inst < 40; ++inst) {
    const std::size_t m = pick(rng, 1, 13), n = pick(rng, 1, 19), k = pick(rng, 1, 23);
    const Matrix a = randn(rng, m, k), b = randn(rng, k, n), bt = b.transposed(), at = a.transposed();
    auto bound = [&](const Matrix& x, const Matrix& y) {
      double s2 = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) s2 += std::abs(x.data()[i]);
      for (std::size_t i = 0; i < y.size(); ++i) s2 += std::abs(y.data()[i]);
      return std::max(s2, 1.0);
    };
    const double scale = bound(a, b);
    Matrix c1(m, n), c2(m, n);
    s.gemm_nn(m, n, k, a.data(), b.data(), c1.data());
    v.gemm_nn(m, n, k, a.data(), b.data(), c2.data());
    t.observe(max_abs_diff(c1, c2) / scale, kKernelTol, "gemm_nn");
    s.gemm_tn(m, n, k, at.data(), b.data(), c1.data());
    v.gemm_tn(m, n, k, at.data(), b.data(), c2.data());
    t.observe(max_abs_diff(c1, c2) / scale, kKernelTol, "gemm_tn");
    s.gemm_nt(m, n, k, a.data(), bt.data(), c1.data());
    v.gemm_nt(m, n, k, a.data(), bt.data(), c2.data());
    t.observe(max_abs_diff(c1, c2) / scale, kKernelTol, "gemm_nt");
    const std::size_t len = m * k;
    const Matrix x = randn(rng, 1, len), y = randn(rng, 1, len);
    t.observe(std::abs(s.dot(x.data(), y.data(), len) - v.dot(x.data(), y.data(), len)) / bound(x, y),
              kKernelTol, "dot");
    Matrix y1 = y, y2 = y;
    s.axpy(0.7, x.data(), y1.data(), len);
    v.axpy(0.7, x.data(), y2.data(), len);
    t.observe(max_abs_diff(y1, y2) / bound(x, y), kKernelTol, "axpy");
  }
}

using CheckFn = void (*)(Tracker&, const VerifyOptions&);
struct NamedCheck {
  const char* name;
  CheckFn fn;
};

constexpr NamedCheck kChecks[] = {
    {"mixed-label linearity", check_linearity},
    {"byol affine identity", check_byol_identity},
    {"loss gradients", check_loss_gradients},
    {"layer gradients", check_layer_gradients},
    {"reductions", check_reductions},
    {"scalar oracle", check_scalar_oracle},
    {"fed unit values", check_fed},
    {"kernel equivalence", check_kernels},
};

}  // namespace

double gradient_rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                          double floor) {
  if (analytic.size() != numeric.size()) throw ShapeError("gradient_rel_error: size mismatch");
  double diff = 0.0, scale = std::max(floor, kGradFloor);
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / scale;
}

std::size_t VerifyReport::passed() const {
  return static_cast<std::size_t>(
      std::count_if(checks.begin(), checks.end(), [](const VerifyCheck& c) { return c.passed; }));
}

std::size_t VerifyReport::failed() const { return checks.size() - passed(); }

std::vector<std::string> verify_check_names() {
  std::vector<std::string> names;
  for (const auto& c : kChecks) names.emplace_back(c.name);
  return names;
}

VerifyReport run_verify(const VerifyOptions& opts) {
  for (const auto& want : opts.only) {
    const auto names = verify_check_names();
    if (std::find(names.begin(), names.end(), want) == names.end()) {
      throw ConfigError("verify: unknown check '" + want + "'");
    }
  }
  VerifyReport report;
  for (const auto& c : kChecks) {
    if (!opts.only.empty() &&
        std::find(opts.only.begin(), opts.only.end(), c.name) == opts.only.end()) {
      continue;
    }
    VerifyCheck check;
    check.name = c.name;
    const auto start = std::chrono::steady_clock::now();
    Tracker tracker{check};
    try {
      c.fn(tracker, opts);
    } catch (const std::exception& e) {
      check.passed = false;
      check.detail = std::string("exception: ") + e.what();
    }
    check.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.checks.push_back(std::move(check));
  }
  return report;
}

}  // namespace imix

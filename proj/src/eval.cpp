#include "imix/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "imix/data.hpp"
#include "imix/errors.hpp"
#include "imix/linalg.hpp"
#include "imix/losses.hpp"

namespace imix {

std::string_view feature_source_name(FeatureSource s) {
  return s == FeatureSource::backbone ? "backbone" : "projection";
}

FeatureSource parse_feature_source(std::string_view name) {
  if (name == "backbone") return FeatureSource::backbone;
  if (name == "projection") return FeatureSource::projection;
  throw ConfigError("unknown feature source '" + std::string(name) +
                    "' (expected backbone, projection)");
}

std::string_view probe_kind_name(ProbeKind k) { return k == ProbeKind::sgd ? "sgd" : "pinv"; }

ProbeKind parse_probe_kind(std::string_view name) {
  if (name == "sgd") return ProbeKind::sgd;
  if (name == "pinv") return ProbeKind::pinv;
  throw ConfigError("unknown probe '" + std::string(name) + "' (expected sgd, pinv)");
}

Matrix extract(const EncoderState& state, const Matrix& x, FeatureSource source) {
  if (x.cols() != state.online.backbone.in_dim()) {
    throw ShapeError("extract: data has " + std::to_string(x.cols()) +
                     " features, encoder expects " + std::to_string(state.online.backbone.in_dim()));
  }
  return source == FeatureSource::backbone ? backbone_features(state, x)
                                           : projection_features(state, x);
}

Matrix LinearProbe::logits(const Matrix& features) const {
  if (features.cols() != weights.rows()) {
    throw ShapeError("probe: feature dim " + std::to_string(features.cols()) + " != probe dim " +
                     std::to_string(weights.rows()));
  }
  Matrix out = matmul(features, weights);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
  }
  return out;
}

std::vector<int> LinearProbe::predict(const Matrix& features) const {
  const Matrix z = logits(features);
  std::vector<int> out(z.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

namespace {

void require_labels(const Matrix& f, std::span<const int> labels, std::size_t c) {
  if (labels.size() != f.rows()) {
    throw ShapeError("probe: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(f.rows()) + " rows");
  }
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw LabelError("probe: label out of range");
}

std::size_t distinct_classes(std::span<const int> labels, std::size_t c) {
  std::vector<std::uint8_t> seen(c, 0);
  for (int y : labels) seen[static_cast<std::size_t>(y)] = 1;
  return static_cast<std::size_t>(std::count(seen.begin(), seen.end(), 1));
}

// Trains from zero; returns nullopt if the run diverged.
std::optional<LinearProbe> train_softmax(const Matrix& f, std::span<const int> y, std::size_t c,
                                         double lr, const ProbeSgdOptions& o) {
  const std::size_t d = f.cols();
  const std::size_t n = f.rows();
  Matrix w(d, c);
  Matrix b(1, c);
  Matrix vw(d, c);
  Matrix vb(1, c);
  Schedule sched;
  sched.base_lr = lr;
  sched.batch_size = 256;  // the grid LR is used as given
  sched.warmup_epochs = 0;
  sched.total_epochs = static_cast<double>(o.epochs);
  sched.mode = ScheduleMode::step;
  sched.milestones = o.milestones;
  sched.factor = o.decay;
  const Rng rng(o.seed);
  const std::size_t bs = std::min(o.batch_size, n);
  for (std::size_t epoch = 0; epoch < o.epochs; ++epoch) {
    const double step_lr = lr_at(sched, static_cast<double>(epoch));
    for (const auto& idx : batches(rng, n, bs, false, epoch)) {
      const Matrix xb = f.gather_rows(idx);
      Matrix z = matmul(xb, w);
      const std::size_t m = idx.size();
      // dloss/dz for mean softmax CE.
      for (std::size_t r = 0; r < m; ++r) {
        auto row = z.row(r);
        double mx = -INFINITY;
        for (std::size_t k = 0; k < c; ++k) {
          row[k] += b(0, k);
          mx = std::max(mx, row[k]);
        }
        double sum = 0.0;
        for (double& v : row) {
          v = std::exp(v - mx);
          sum += v;
        }
        for (double& v : row) v /= sum * static_cast<double>(m);
        row[static_cast<std::size_t>(y[idx[r]])] -= 1.0 / static_cast<double>(m);
      }
      const Matrix gw = matmul_tn(xb, z);
      for (std::size_t i = 0; i < w.size(); ++i) {
        vw.data()[i] = o.momentum * vw.data()[i] + gw.data()[i] + o.weight_decay * w.data()[i];
        w.data()[i] -= step_lr * vw.data()[i];
      }
      for (std::size_t k = 0; k < c; ++k) {
        double g = 0.0;
        for (std::size_t r = 0; r < m; ++r) g += z(r, k);
        vb(0, k) = o.momentum * vb(0, k) + g;
        b(0, k) -= step_lr * vb(0, k);
      }
    }
    if (!w.all_finite() || !b.all_finite()) return std::nullopt;
  }
  LinearProbe p;
  p.weights = std::move(w);
  p.bias.assign(b.flat().begin(), b.flat().end());
  return p;
}

}  // namespace

ProbeSgdResult probe_sgd(const Matrix& features, std::span<const int> labels,
                         std::size_t num_classes, const ProbeSgdOptions& opts) {
  require_labels(features, labels, num_classes);
  if (distinct_classes(labels, num_classes) < 2) {
    throw ConfigError("probe_sgd: labels contain a single class; the problem is degenerate");
  }
  if (opts.lr_grid.empty()) throw ConfigError("probe_sgd: empty LR grid");

  Dataset all;
  all.features = features;
  all.labels = std::vector<int>(labels.begin(), labels.end());
  all.num_classes = num_classes;
  SplitSpec spec;
  spec.train_fraction = 1.0 - opts.val_fraction;
  spec.test_fraction = opts.val_fraction;
  spec.seed = opts.seed;
  const auto [fit, val] = split(all, spec);

  ProbeSgdResult out;
  double best = -1.0;
  for (double lr : opts.lr_grid) {
    const auto probe = train_softmax(fit.features, *fit.labels, num_classes, lr, opts);
    const double acc = probe ? top1(*probe, val.features, *val.labels) : 0.0;
    out.val_accuracy.push_back(acc);
    if (acc > best) {
      best = acc;
      out.selected_lr = lr;
    }
  }
  auto final_probe = train_softmax(features, labels, num_classes, out.selected_lr, opts);
  if (!final_probe) {
    throw NumericError("probe_sgd: retraining diverged at lr " + std::to_string(out.selected_lr));
  }
  out.probe = std::move(*final_probe);
  return out;
}

LinearProbe probe_pinv(const Matrix& features, std::span<const int> labels,
                       std::size_t num_classes) {
  require_labels(features, labels, num_classes);
  const std::size_t n = features.rows();
  const std::size_t d = features.cols();
  Matrix aug(n, d + 1);
  Matrix y(n, num_classes);
  for (std::size_t r = 0; r < n; ++r) {
    auto src = features.row(r);
    std::copy(src.begin(), src.end(), aug.row(r).begin());
    aug(r, d) = 1.0;
    y(r, static_cast<std::size_t>(labels[r])) = 1.0;
  }
  const Matrix w = matmul(pinv(aug), y);
  LinearProbe p;
  p.weights = Matrix(d, num_classes);
  p.bias.assign(num_classes, 0.0);
  for (std::size_t k = 0; k < num_classes; ++k) {
    for (std::size_t i = 0; i < d; ++i) p.weights(i, k) = w(i, k);
    p.bias[k] = w(d, k);
  }
  return p;
}

double top1(const LinearProbe& probe, const Matrix& features, std::span<const int> labels) {
  if (labels.size() != features.rows()) throw ShapeError("top1: label count mismatch");
  if (labels.empty()) return 0.0;
  const std::vector<int> pred = probe.predict(features);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

PerClassAccuracy per_class_accuracy(const LinearProbe& probe, const Matrix& features,
                                    std::span<const int> labels, std::size_t num_classes) {
  require_labels(features, labels, num_classes);
  const std::vector<int> pred = probe.predict(features);
  PerClassAccuracy out;
  out.accuracy.assign(num_classes, 0.0);
  out.count.assign(num_classes, 0);
  std::vector<std::size_t> hit(num_classes, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    ++out.count[y];
    hit[y] += pred[i] == labels[i];
  }
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (out.count[k]) out.accuracy[k] = static_cast<double>(hit[k]) / static_cast<double>(out.count[k]);
  }
  return out;
}

FedStats FedStats::from_features(const Matrix& features) {
  if (features.rows() < 2) throw ConfigError("fed: need at least two embeddings per set");
  const Matrix u = normalize_rows(features).unit;
  const std::size_t n = u.rows();
  const std::size_t d = u.cols();
  FedStats s;
  s.mean.assign(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) s.mean[c] += u(r, c);
  for (double& m : s.mean) m /= static_cast<double>(n);
  Matrix centered = u;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) centered(r, c) -= s.mean[c];
  s.cov = matmul_tn(centered, centered);
  s.cov *= 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) {
      const double m = 0.5 * (s.cov(i, j) + s.cov(j, i));
      s.cov(i, j) = m;
      s.cov(j, i) = m;
    }
  return s;
}

double fed(const FedStats& a, const FedStats& b) {
  if (a.mean.size() != b.mean.size()) throw ShapeError("fed: embedding dims differ");
  double mean_term = 0.0;
  for (std::size_t i = 0; i < a.mean.size(); ++i) {
    const double d = a.mean[i] - b.mean[i];
    mean_term += d * d;
  }
  const Matrix ra = psd_sqrt(a.cov);
  Matrix inner = matmul(matmul(ra, b.cov), ra);
  for (std::size_t i = 0; i < inner.rows(); ++i)
    for (std::size_t j = i + 1; j < inner.cols(); ++j) {
      const double m = 0.5 * (inner(i, j) + inner(j, i));
      inner(i, j) = m;
      inner(j, i) = m;
    }
  const double cross = trace(psd_sqrt(inner));
  const double value = mean_term + trace(a.cov) + trace(b.cov) - 2.0 * cross;
  return std::max(0.0, value);
}

double fed(const Matrix& train_features, const Matrix& test_features) {
  return fed(FedStats::from_features(train_features), FedStats::from_features(test_features));
}

void export_embeddings(const Matrix& features, const std::vector<int>* labels,
                       const std::filesystem::path& path) {
  if (labels && labels->size() != features.rows()) {
    throw ShapeError("export_embeddings: label count mismatch");
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  for (std::size_t c = 0; c < features.cols(); ++c) out << (c ? "," : "") << "e" << c;
  if (labels) out << (features.cols() ? "," : "") << "label";
  out << '\n';
  char buf[40];
  for (std::size_t r = 0; r < features.rows(); ++r) {
    for (std::size_t c = 0; c < features.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", features(r, c));
      out << (c ? "," : "") << buf;
    }
    if (labels) out << (features.cols() ? "," : "") << (*labels)[r];
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace imix

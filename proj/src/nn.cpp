#include "imix/nn.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>

#include "imix/errors.hpp"
#include "imix/kernels.hpp"

namespace imix {

std::size_t LayerSpec::effective_out() const {
  return activation == Activation::maxout ? out_dim / maxout_sets : out_dim;
}

void LayerSpec::validate() const {
  if (in_dim == 0 || out_dim == 0) throw ConfigError("layer dimensions must be positive");
  if (activation == Activation::maxout) {
    if (maxout_sets == 0 || out_dim % maxout_sets != 0) {
      throw ConfigError("maxout: out_dim " + std::to_string(out_dim) +
                        " is not divisible by sets " + std::to_string(maxout_sets));
    }
  }
}

std::uint64_t Mlp::next_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

Mlp::Mlp(std::vector<LayerSpec> specs, Rng& rng) {
  std::size_t prev = 0;
  for (const LayerSpec& spec : specs) {
    spec.validate();
    if (prev != 0 && spec.in_dim != prev) {
      throw ConfigError("layer input " + std::to_string(spec.in_dim) +
                        " does not match previous output " + std::to_string(prev));
    }
    prev = spec.effective_out();
    DenseLayer layer;
    layer.spec = spec;
    layer.weight = Matrix(spec.in_dim, spec.out_dim);
    const double bound = std::sqrt(6.0 / static_cast<double>(spec.in_dim));
    for (double& w : layer.weight.flat()) w = rng.uniform(-bound, bound);
    layer.bias = Matrix(1, spec.out_dim);
    if (spec.batch_norm) {
      layer.gamma = Matrix(1, spec.out_dim, 1.0);
      layer.beta = Matrix(1, spec.out_dim);
      layer.running_mean = Matrix(1, spec.out_dim);
      layer.running_var = Matrix(1, spec.out_dim, 1.0);
    }
    layers_.push_back(std::move(layer));
  }
}

Mlp::Mlp(const Mlp& other) : layers_(other.layers_), id_(next_id()), version_(0) {}

Mlp& Mlp::operator=(const Mlp& other) {
  if (this != &other) {
    layers_ = other.layers_;
    ++version_;
  }
  return *this;
}

Mlp Mlp::identity(std::size_t dim, std::size_t depth) {
  Mlp m;
  for (std::size_t d = 0; d < depth; ++d) {
    DenseLayer layer;
    layer.spec = LayerSpec{dim, dim, Activation::identity, 1, false};
    layer.weight = Matrix::identity(dim);
    layer.bias = Matrix(1, dim);
    m.layers_.push_back(std::move(layer));
  }
  return m;
}

std::size_t Mlp::in_dim() const { return layers_.empty() ? 0 : layers_.front().spec.in_dim; }

std::size_t Mlp::out_dim() const {
  return layers_.empty() ? 0 : layers_.back().spec.effective_out();
}

Matrix Mlp::forward(const Matrix& x, Mode mode, ForwardCache* cache, bool update_stats) {
  return forward_impl(x, mode, cache, update_stats && mode == Mode::train, &layers_);
}

Matrix Mlp::infer(const Matrix& x) const { return forward_impl(x, Mode::eval, nullptr, false, nullptr); }

Matrix Mlp::forward_impl(const Matrix& x, Mode mode, ForwardCache* cache, bool update_stats,
                         std::vector<DenseLayer>* stats_sink) const {
  if (layers_.empty()) throw UsageError("forward on an empty network");
  if (x.cols() != in_dim()) {
    throw ShapeError("forward: input has " + std::to_string(x.cols()) + " columns, network expects " +
                     std::to_string(in_dim()));
  }
  if (cache) {
    cache->layers.clear();
    cache->layers.resize(layers_.size());
    cache->owner = id_;
    cache->version = version_;
  }
  const std::size_t n = x.rows();
  Matrix h = x;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const DenseLayer& layer = layers_[li];
    const std::size_t out = layer.spec.out_dim;
    LayerCache* lc = cache ? &cache->layers[li] : nullptr;
    if (lc) lc->input = h;

    Matrix z = matmul(h, layer.weight);
    for (std::size_t r = 0; r < n; ++r) {
      auto zr = z.row(r);
      for (std::size_t j = 0; j < out; ++j) zr[j] += layer.bias(0, j);
    }

    if (layer.spec.batch_norm) {
      std::vector<double> mean(out, 0.0), var(out, 0.0), inv_std(out);
      const bool batch = mode == Mode::train;
      if (batch) {
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < out; ++j) mean[j] += z(r, j);
        for (double& m : mean) m /= static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < out; ++j) {
            const double d = z(r, j) - mean[j];
            var[j] += d * d;
          }
        for (double& v : var) v /= static_cast<double>(n);
      } else {
        for (std::size_t j = 0; j < out; ++j) {
          mean[j] = layer.running_mean(0, j);
          var[j] = layer.running_var(0, j);
        }
      }
      for (std::size_t j = 0; j < out; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + kBatchNormEps);
      Matrix xhat(n, out);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < out; ++j) {
          xhat(r, j) = (z(r, j) - mean[j]) * inv_std[j];
          z(r, j) = layer.gamma(0, j) * xhat(r, j) + layer.beta(0, j);
        }
      if (batch && update_stats && stats_sink) {
        DenseLayer& sink = (*stats_sink)[li];
        // Running variance uses the unbiased estimate; stays positive because
        // the previous value is kept with weight 1 - momentum.
        const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
        for (std::size_t j = 0; j < out; ++j) {
          sink.running_mean(0, j) =
              (1.0 - kBatchNormMomentum) * sink.running_mean(0, j) + kBatchNormMomentum * mean[j];
          sink.running_var(0, j) = (1.0 - kBatchNormMomentum) * sink.running_var(0, j) +
                                   kBatchNormMomentum * var[j] * unbias;
        }
      }
      if (lc) {
        lc->xhat = std::move(xhat);
        lc->inv_std = std::move(inv_std);
        lc->batch_stats = batch;
      }
    }

    switch (layer.spec.activation) {
      case Activation::identity:
        if (lc) lc->pre_activation = z;
        h = std::move(z);
        break;
      case Activation::relu: {
        if (lc) lc->pre_activation = z;
        for (double& v : z.flat()) v = v > 0.0 ? v : 0.0;
        h = std::move(z);
        break;
      }
      case Activation::maxout: {
        const std::size_t sets = layer.spec.maxout_sets;
        const std::size_t eff = out / sets;
        Matrix a(n, eff);
        std::vector<std::uint32_t> arg(lc ? n * eff : 0);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t k = 0; k < eff; ++k) {
            std::size_t best = 0;
            double best_v = z(r, k * sets);
            // Strict comparison keeps ties on the lowest slot.
            for (std::size_t s = 1; s < sets; ++s) {
              const double v = z(r, k * sets + s);
              if (v > best_v) {
                best_v = v;
                best = s;
              }
            }
            a(r, k) = best_v;
            if (lc) arg[r * eff + k] = static_cast<std::uint32_t>(best);
          }
        }
        if (lc) {
          lc->pre_activation = std::move(z);
          lc->argmax = std::move(arg);
        }
        h = std::move(a);
        break;
      }
    }
  }
  return h;
}

Matrix Mlp::backward(const ForwardCache& cache, const Matrix& grad_out,
                     std::vector<Matrix>& grads) const {
  if (!cache.valid() || cache.owner != id_) {
    throw UsageError("backward: cache is missing or was produced by a different network");
  }
  if (cache.version != version_) {
    throw UsageError("backward: cache is stale (parameters changed since forward)");
  }
  if (cache.layers.size() != layers_.size()) throw UsageError("backward: malformed cache");
  const std::size_t expected_grads = parameters().size();
  if (grads.size() != expected_grads) throw UsageError("backward: gradient buffer misaligned");

  const std::size_t n = cache.layers.front().input.rows();
  if (grad_out.rows() != n || grad_out.cols() != out_dim()) {
    throw ShapeError("backward: grad_out shape does not match network output");
  }

  // Offsets of each layer's tensors within grads.
  std::vector<std::size_t> offset(layers_.size());
  std::size_t pos = 0;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    offset[li] = pos;
    pos += layers_[li].spec.batch_norm ? 4 : 2;
  }

  Matrix da = grad_out;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const DenseLayer& layer = layers_[li];
    const LayerCache& lc = cache.layers[li];
    const std::size_t out = layer.spec.out_dim;

    Matrix dz(n, out);
    switch (layer.spec.activation) {
      case Activation::identity:
        dz = da;
        break;
      case Activation::relu:
        for (std::size_t i = 0; i < dz.size(); ++i) {
          dz.flat()[i] = lc.pre_activation.flat()[i] > 0.0 ? da.flat()[i] : 0.0;
        }
        break;
      case Activation::maxout: {
        const std::size_t sets = layer.spec.maxout_sets;
        const std::size_t eff = out / sets;
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t k = 0; k < eff; ++k) dz(r, k * sets + lc.argmax[r * eff + k]) = da(r, k);
        break;
      }
    }

    if (layer.spec.batch_norm) {
      Matrix& dgamma = grads[offset[li] + 2];
      Matrix& dbeta = grads[offset[li] + 3];
      std::vector<double> sum_dxhat(out, 0.0), sum_dxhat_xhat(out, 0.0);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < out; ++j) {
          const double g = dz(r, j);
          dgamma(0, j) += g * lc.xhat(r, j);
          dbeta(0, j) += g;
          const double dxh = g * layer.gamma(0, j);
          dz(r, j) = dxh;
          sum_dxhat[j] += dxh;
          sum_dxhat_xhat[j] += dxh * lc.xhat(r, j);
        }
      }
      if (lc.batch_stats) {
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < out; ++j) {
            dz(r, j) = lc.inv_std[j] * (dz(r, j) - inv_n * sum_dxhat[j] -
                                        lc.xhat(r, j) * inv_n * sum_dxhat_xhat[j]);
          }
      } else {
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < out; ++j) dz(r, j) *= lc.inv_std[j];
      }
    }

    grads[offset[li]] += matmul_tn(lc.input, dz);
    Matrix& db = grads[offset[li] + 1];
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < out; ++j) db(0, j) += dz(r, j);
    da = matmul_nt(dz, layer.weight);
  }
  return da;
}

std::vector<Matrix*> Mlp::parameters() {
  std::vector<Matrix*> out;
  for (DenseLayer& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
    if (l.spec.batch_norm) {
      out.push_back(&l.gamma);
      out.push_back(&l.beta);
    }
  }
  return out;
}

std::vector<const Matrix*> Mlp::parameters() const {
  std::vector<const Matrix*> out;
  for (const DenseLayer& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
    if (l.spec.batch_norm) {
      out.push_back(&l.gamma);
      out.push_back(&l.beta);
    }
  }
  return out;
}

std::vector<std::string> Mlp::parameter_names(const std::string& prefix) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string base = prefix + "." + std::to_string(i) + ".";
    out.push_back(base + "weight");
    out.push_back(base + "bias");
    if (layers_[i].spec.batch_norm) {
      out.push_back(base + "gamma");
      out.push_back(base + "beta");
    }
  }
  return out;
}

std::vector<Matrix> Mlp::zero_grads() const {
  std::vector<Matrix> out;
  for (const Matrix* p : parameters()) out.emplace_back(p->rows(), p->cols());
  return out;
}

void EncoderSpec::validate() const {
  if (input_dim == 0) throw ConfigError("encoder input_dim must be positive");
  if (backbone.empty()) throw ConfigError("encoder backbone must have at least one layer");
  if (backbone.front().in_dim != input_dim) {
    throw ConfigError("backbone first layer expects " + std::to_string(backbone.front().in_dim) +
                      " inputs, data has " + std::to_string(input_dim));
  }
  if (proj_hidden == 0 || proj_out == 0) throw ConfigError("projection dims must be positive");
  if (predictor && pred_hidden == 0) throw ConfigError("predictor hidden dim must be positive");
}

std::vector<LayerSpec> mlp_backbone(std::size_t input_dim, std::size_t width, std::size_t depth,
                                    bool batch_norm) {
  std::vector<LayerSpec> specs;
  std::size_t in = input_dim;
  for (std::size_t d = 0; d < depth; ++d) {
    specs.push_back(LayerSpec{in, width, Activation::relu, 1, batch_norm});
    in = width;
  }
  return specs;
}

std::vector<Matrix*> EncoderState::parameters() {
  std::vector<Matrix*> out = online.backbone.parameters();
  for (Matrix* p : online.projection.parameters()) out.push_back(p);
  if (online.predictor)
    for (Matrix* p : online.predictor->parameters()) out.push_back(p);
  return out;
}

std::vector<const Matrix*> EncoderState::parameters() const {
  std::vector<const Matrix*> out = std::as_const(online.backbone).parameters();
  for (const Matrix* p : std::as_const(online.projection).parameters()) out.push_back(p);
  if (online.predictor)
    for (const Matrix* p : std::as_const(*online.predictor).parameters()) out.push_back(p);
  return out;
}

std::vector<std::string> EncoderState::parameter_names() const {
  std::vector<std::string> out = online.backbone.parameter_names("backbone");
  for (auto& n : online.projection.parameter_names("projection")) out.push_back(std::move(n));
  if (online.predictor)
    for (auto& n : online.predictor->parameter_names("predictor")) out.push_back(std::move(n));
  return out;
}

std::vector<Matrix> EncoderState::zero_grads() const {
  std::vector<Matrix> out;
  for (const Matrix* p : parameters()) out.emplace_back(p->rows(), p->cols());
  return out;
}

EncoderState make_encoder(const EncoderSpec& spec, Rng& rng) {
  spec.validate();
  EncoderState state;
  state.spec = spec;
  state.online.backbone = Mlp(spec.backbone, rng);
  const std::size_t feat = state.online.backbone.out_dim();
  state.online.projection =
      Mlp({LayerSpec{feat, spec.proj_hidden, Activation::relu, 1, false},
           LayerSpec{spec.proj_hidden, spec.proj_out, Activation::identity, 1, false}},
          rng);
  if (spec.predictor) {
    state.online.predictor =
        Mlp({LayerSpec{spec.proj_out, spec.pred_hidden, Activation::relu, 1, false},
             LayerSpec{spec.pred_hidden, spec.proj_out, Activation::identity, 1, false}},
            rng);
  }
  if (spec.ema) {
    state.ema_shadow = Network{state.online.backbone, state.online.projection, std::nullopt};
  }
  state.momentum = state.zero_grads();
  return state;
}

Matrix forward(EncoderState& state, const Matrix& x, Mode mode, EncoderCache* cache) {
  Matrix feat = state.online.backbone.forward(x, mode, cache ? &cache->backbone : nullptr);
  Matrix z = state.online.projection.forward(feat, mode, cache ? &cache->projection : nullptr);
  if (cache) cache->predictor = ForwardCache{};
  return z;
}

Matrix backbone_features(const EncoderState& state, const Matrix& x) {
  return state.online.backbone.infer(x);
}

Matrix projection_features(const EncoderState& state, const Matrix& x) {
  return state.online.projection.infer(state.online.backbone.infer(x));
}

Matrix ema_forward(const EncoderState& state, const Matrix& x) {
  if (!state.ema_shadow) throw UsageError("ema_forward: encoder has no EMA shadow");
  // Copies keep the shadow's stored statistics untouched.
  Mlp backbone = state.ema_shadow->backbone;
  Mlp projection = state.ema_shadow->projection;
  const Matrix feat = backbone.forward(x, Mode::train, nullptr, false);
  return projection.forward(feat, Mode::train, nullptr, false);
}

Matrix predict_head(EncoderState& state, const Matrix& embedding, EncoderCache* cache) {
  if (!state.online.predictor) throw UsageError("predict_head: encoder has no prediction head");
  return state.online.predictor->forward(embedding, Mode::train,
                                         cache ? &cache->predictor : nullptr);
}

void backward(const EncoderState& state, const EncoderCache& cache, const Matrix& grad_out,
              std::vector<Matrix>& grads) {
  const std::size_t nb = state.online.backbone.parameters().size();
  const std::size_t np = state.online.projection.parameters().size();
  const std::size_t nq = state.online.predictor ? state.online.predictor->parameters().size() : 0;
  if (grads.size() != nb + np + nq) throw UsageError("backward: gradient buffer misaligned");
  if (!cache.backbone.valid() || !cache.projection.valid()) {
    throw UsageError("backward: missing encoder cache");
  }

  auto slice = [&](std::size_t from, std::size_t count) {
    return std::vector<Matrix>(std::make_move_iterator(grads.begin() + static_cast<std::ptrdiff_t>(from)),
                               std::make_move_iterator(grads.begin() + static_cast<std::ptrdiff_t>(from + count)));
  };
  auto unslice = [&](std::vector<Matrix>& part, std::size_t from) {
    for (std::size_t i = 0; i < part.size(); ++i) grads[from + i] = std::move(part[i]);
  };

  Matrix g = grad_out;
  if (cache.predictor.valid()) {
    if (!state.online.predictor) throw UsageError("backward: predictor cache without a head");
    auto part = slice(nb + np, nq);
    g = state.online.predictor->backward(cache.predictor, g, part);
    unslice(part, nb + np);
  }
  {
    auto part = slice(nb, np);
    g = state.online.projection.backward(cache.projection, g, part);
    unslice(part, nb);
  }
  {
    auto part = slice(0, nb);
    state.online.backbone.backward(cache.backbone, g, part);
    unslice(part, 0);
  }
}

void sgd_step(EncoderState& state, const std::vector<Matrix>& grads, double lr, double momentum,
              double weight_decay) {
  if (lr < 0.0) throw ConfigError("sgd_step: lr must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("sgd_step: momentum must be in [0,1)");
  std::vector<Matrix*> params = state.parameters();
  if (grads.size() != params.size() || state.momentum.size() != params.size()) {
    throw UsageError("sgd_step: gradient/parameter count mismatch");
  }
  const auto& k = kernels::active();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    Matrix& buf = state.momentum[i];
    if (!grads[i].same_shape(p) || !buf.same_shape(p)) {
      throw UsageError("sgd_step: shape mismatch for parameter " + std::to_string(i));
    }
    double* b = buf.data();
    const double* g = grads[i].data();
    double* w = p.data();
    const std::size_t n = p.size();
    for (std::size_t j = 0; j < n; ++j) b[j] = momentum * b[j] + g[j] + weight_decay * w[j];
    k.axpy(-lr, b, w, n);
  }
  state.online.backbone.bump_version();
  state.online.projection.bump_version();
  if (state.online.predictor) state.online.predictor->bump_version();
  ++state.step;
}

void ema_update(EncoderState& state, double m) {
  if (!state.ema_shadow) throw UsageError("ema_update: encoder has no EMA shadow");
  if (m < 0.0 || m >= 1.0) throw ConfigError("ema_update: m must be in [0,1)");
  auto update = [m](Mlp& shadow, const Mlp& live) {
    std::vector<Matrix*> s = shadow.parameters();
    std::vector<const Matrix*> l = live.parameters();
    if (s.size() != l.size()) throw UsageError("ema_update: shadow layout differs from live");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!s[i]->same_shape(*l[i])) throw UsageError("ema_update: shadow shape mismatch");
      double* sd = s[i]->data();
      const double* ld = l[i]->data();
      for (std::size_t j = 0; j < s[i]->size(); ++j) sd[j] = m * sd[j] + (1.0 - m) * ld[j];
    }
    shadow.bump_version();
  };
  update(state.ema_shadow->backbone, state.online.backbone);
  update(state.ema_shadow->projection, state.online.projection);
}

void Schedule::validate() const {
  if (base_lr < 0.0) throw ConfigError("schedule: base_lr must be >= 0");
  if (batch_size == 0) throw ConfigError("schedule: batch_size must be positive");
  if (total_epochs > 0 && !(warmup_epochs < total_epochs)) {
    throw ConfigError("schedule: warmup_epochs must be < total_epochs");
  }
  if (warmup_epochs < 0) throw ConfigError("schedule: warmup_epochs must be >= 0");
}

double lr_at(const Schedule& s, double epoch) {
  const double peak = s.scaled_lr();
  if (epoch < s.warmup_epochs) return peak * epoch / s.warmup_epochs;
  if (s.mode == ScheduleMode::step) {
    double lr = peak;
    for (double m : s.milestones)
      if (epoch >= m) lr *= s.factor;
    return lr;
  }
  const double span = s.total_epochs - s.warmup_epochs;
  if (span <= 0.0) return peak;
  const double t = std::clamp((epoch - s.warmup_epochs) / span, 0.0, 1.0);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace imix

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "imix/matrix.hpp"
#include "imix/rng.hpp"

namespace imix {

enum class Activation { identity, relu, maxout };

// Dense layer: linear -> optional batch norm -> activation.
struct LayerSpec {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Activation activation = Activation::relu;
  std::size_t maxout_sets = 1;  // only read for maxout
  bool batch_norm = false;

  // Width after the activation (out_dim / sets for maxout).
  std::size_t effective_out() const;
  void validate() const;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

struct DenseLayer {
  LayerSpec spec;
  Matrix weight;  // in_dim x out_dim
  Matrix bias;    // 1 x out_dim
  Matrix gamma;   // 1 x out_dim, batch norm only
  Matrix beta;
  Matrix running_mean;
  Matrix running_var;
};

enum class Mode { train, eval };

struct LayerCache {
  Matrix input;
  Matrix xhat;                  // normalised pre-activation (batch norm only)
  std::vector<double> inv_std;  // per unit
  Matrix pre_activation;        // value fed to the activation
  std::vector<std::uint32_t> argmax;  // maxout winners, n * effective_out
  bool batch_stats = false;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  std::uint64_t owner = 0;    // Mlp identity
  std::uint64_t version = 0;  // parameter version at forward time
  bool valid() const { return owner != 0; }
};

// Stack of dense layers with hand-derived backward pass.
class Mlp {
 public:
  Mlp() = default;
  // Weights ~ U(-b, b) with b = sqrt(6 / fan_in); biases zero; gamma one.
  Mlp(std::vector<LayerSpec> specs, Rng& rng);

  Mlp(const Mlp& other);
  Mlp& operator=(const Mlp& other);
  Mlp(Mlp&&) noexcept = default;
  Mlp& operator=(Mlp&&) noexcept = default;

  // Square identity layers (no batch norm, identity activation).
  static Mlp identity(std::size_t dim, std::size_t depth = 1);

  std::size_t in_dim() const;
  std::size_t out_dim() const;
  bool empty() const { return layers_.empty(); }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& mutable_layers() { return layers_; }

  // Train mode normalises with batch statistics and, if update_stats, moves
  // the running statistics. Eval mode is a pure function of x and the stored
  // statistics.
  Matrix forward(const Matrix& x, Mode mode, ForwardCache* cache = nullptr,
                 bool update_stats = true);
  Matrix infer(const Matrix& x) const;

  // Accumulates parameter gradients into grads (aligned with parameters())
  // and returns the gradient with respect to the input.
  Matrix backward(const ForwardCache& cache, const Matrix& grad_out,
                  std::vector<Matrix>& grads) const;

  // Trainable tensors in a fixed order: per layer weight, bias[, gamma, beta].
  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
  std::vector<std::string> parameter_names(const std::string& prefix) const;
  std::vector<Matrix> zero_grads() const;

  // Called after any in-place parameter change so stale caches are rejected.
  void bump_version() { ++version_; }

 private:
  Matrix forward_impl(const Matrix& x, Mode mode, ForwardCache* cache, bool update_stats,
                      std::vector<DenseLayer>* stats_sink) const;

  std::vector<DenseLayer> layers_;
  std::uint64_t id_ = next_id();
  std::uint64_t version_ = 0;

  static std::uint64_t next_id();
};

struct EncoderSpec {
  std::size_t input_dim = 0;
  std::vector<LayerSpec> backbone;
  std::size_t proj_hidden = 128;
  std::size_t proj_out = 64;
  bool predictor = false;     // BYOL prediction head g
  std::size_t pred_hidden = 128;
  bool ema = false;           // keep an EMA shadow of backbone + projection

  void validate() const;
};

// Default backbone: depth x width ReLU layers with batch norm.
std::vector<LayerSpec> mlp_backbone(std::size_t input_dim, std::size_t width, std::size_t depth,
                                    bool batch_norm = true);

struct Network {
  Mlp backbone;
  Mlp projection;
  std::optional<Mlp> predictor;
};

struct EncoderState {
  EncoderSpec spec;
  Network online;
  std::optional<Network> ema_shadow;  // backbone + projection only
  std::vector<Matrix> momentum;       // aligned with parameters()
  std::uint64_t step = 0;

  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::vector<Matrix> zero_grads() const;
};

// Builds the networks from spec; the EMA shadow, when requested, starts as an
// exact copy of the online backbone + projection.
EncoderState make_encoder(const EncoderSpec& spec, Rng& rng);

struct EncoderCache {
  ForwardCache backbone;
  ForwardCache projection;
  ForwardCache predictor;
};

// Backbone + projection output.
Matrix forward(EncoderState& state, const Matrix& x, Mode mode, EncoderCache* cache = nullptr);
// Backbone output only (frozen features; the projection head is excluded).
Matrix backbone_features(const EncoderState& state, const Matrix& x);
Matrix projection_features(const EncoderState& state, const Matrix& x);
// Shadow network forward with batch statistics, no stat updates, no cache.
Matrix ema_forward(const EncoderState& state, const Matrix& x);
// Prediction head on top of a projection output; appends to cache.
Matrix predict_head(EncoderState& state, const Matrix& embedding, EncoderCache* cache = nullptr);

// Gradients w.r.t. every online parameter. grad_out is taken w.r.t. the last
// output recorded in cache (the prediction when present, else the projection).
// Accumulates into grads, which must come from state.zero_grads().
void backward(const EncoderState& state, const EncoderCache& cache, const Matrix& grad_out,
              std::vector<Matrix>& grads);

// buffer <- momentum * buffer + grad + weight_decay * param
// param  <- param - lr * buffer
void sgd_step(EncoderState& state, const std::vector<Matrix>& grads, double lr, double momentum,
              double weight_decay);

// shadow <- m * shadow + (1 - m) * live, elementwise over backbone + projection.
void ema_update(EncoderState& state, double m);

enum class ScheduleMode { cosine, step };

struct Schedule {
  double base_lr = 0.125;
  std::size_t batch_size = 256;
  double warmup_epochs = 10;
  double total_epochs = 100;
  ScheduleMode mode = ScheduleMode::cosine;
  std::vector<double> milestones;  // step mode
  double factor = 0.1;             // step mode

  double scaled_lr() const { return base_lr * static_cast<double>(batch_size) / 256.0; }
  void validate() const;
};

// Linear ramp from 0 over the warmup, then cosine to 0 (or step decay).
double lr_at(const Schedule& schedule, double epoch);

}  // namespace imix

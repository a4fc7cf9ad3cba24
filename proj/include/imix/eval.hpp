#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "imix/matrix.hpp"
#include "imix/nn.hpp"

namespace imix {

enum class FeatureSource { backbone, projection };
std::string_view feature_source_name(FeatureSource s);
FeatureSource parse_feature_source(std::string_view name);

// Frozen eval-mode features, no augmentation. Backbone output by default.
Matrix extract(const EncoderState& state, const Matrix& x,
               FeatureSource source = FeatureSource::backbone);

struct LinearProbe {
  Matrix weights;             // D x C
  std::vector<double> bias;   // C

  Matrix logits(const Matrix& features) const;
  // argmax, ties to the lowest class index.
  std::vector<int> predict(const Matrix& features) const;
};

enum class ProbeKind { sgd, pinv };
std::string_view probe_kind_name(ProbeKind k);
ProbeKind parse_probe_kind(std::string_view name);

struct ProbeSgdOptions {
  std::vector<double> lr_grid{1, 3, 5, 10, 30, 50, 70};
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::vector<double> milestones{80, 90, 95};
  double decay = 0.2;
  double val_fraction = 0.2;  // held out from the training features to pick the LR
  std::uint64_t seed = 0;
};

struct ProbeSgdResult {
  LinearProbe probe;
  double selected_lr = 0.0;
  std::vector<double> val_accuracy;  // aligned with lr_grid; diverged runs score 0
};

// Softmax regression by minibatch SGD. Each grid LR is trained on the
// train part of a stratified split and scored on the held-out part; the best
// (ties to the smaller LR) is retrained on all features.
// ConfigError if fewer than two classes occur.
ProbeSgdResult probe_sgd(const Matrix& features, std::span<const int> labels,
                         std::size_t num_classes, const ProbeSgdOptions& opts = {});

// Least squares onto one-hot targets: [F 1]^+ Y.
LinearProbe probe_pinv(const Matrix& features, std::span<const int> labels,
                       std::size_t num_classes);

double top1(const LinearProbe& probe, const Matrix& features, std::span<const int> labels);

struct PerClassAccuracy {
  std::vector<double> accuracy;    // NaN-free: classes without samples report 0
  std::vector<std::size_t> count;
};
PerClassAccuracy per_class_accuracy(const LinearProbe& probe, const Matrix& features,
                                    std::span<const int> labels, std::size_t num_classes);

// Gaussian statistics of L2-normalised rows; covariance with 1/N.
struct FedStats {
  std::vector<double> mean;
  Matrix cov;

  static FedStats from_features(const Matrix& features);
};

double fed(const FedStats& a, const FedStats& b);
// Both sets need at least two rows; zero rows raise NumericError.
double fed(const Matrix& train_features, const Matrix& test_features);

// CSV with columns e0..e{D-1} and, when labels are given, "label".
void export_embeddings(const Matrix& features, const std::vector<int>* labels,
                       const std::filesystem::path& path);

}  // namespace imix

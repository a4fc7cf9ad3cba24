#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "imix/augment.hpp"
#include "imix/config.hpp"
#include "imix/data.hpp"
#include "imix/eval.hpp"
#include "imix/losses.hpp"
#include "imix/memory_bank.hpp"
#include "imix/metrics.hpp"
#include "imix/nn.hpp"

namespace imix {

// Train/test split of the pretext data with the train-fitted standardiser
// already applied to both sides.
struct PreparedData {
  Dataset train;
  Dataset test;
  Standardizer standardizer;  // empty when data.normalize is off
};

PreparedData prepare_pretext_data(const RunConfig& cfg);
// Downstream split for evaluation. An empty path reuses the pretext data.
// The given standardiser (fitted on the pretext train split) is applied.
PreparedData prepare_eval_data(const RunConfig& cfg, const Standardizer& standardizer,
                               const std::string& downstream_path);

// Rng streams derived from the run seed.
enum RngStream : std::uint64_t {
  kInitStream = 1,
  kAugmentStream = 2,
  kBatchStream = 3,
  kBankStream = 4,
};

struct TrainerState {
  RunConfig cfg;
  EncoderState encoder;
  std::optional<MemoryBank> bank;  // moco only
  Rng aug_rng{0};
  SpatialShape spatial;
  std::uint64_t steps = 0;
};

TrainerState init_trainer(const RunConfig& cfg, std::size_t input_dim, const SpatialShape& spatial);

struct StepResult {
  double loss = 0.0;
  double lr = 0.0;
  MixPlan plan;  // identity when i-Mix is off
};

// One forward/backward/SGD step on raw batch x (views and mixing drawn from
// state.aug_rng). For moco/byol the shadow is updated after SGD, then moco
// pushes the batch's EMA keys into the bank. NumericError on a non-finite
// loss.
StepResult pretext_step(TrainerState& state, const Matrix& x, std::span<const int> labels, double lr);

struct PretextHooks {
  std::function<void(const MetricsRecord&)> on_record;
  // Called after the epochs listed by checkpoint.every, and once at the end.
  std::function<void(const TrainerState&, std::size_t epoch)> on_checkpoint;
  // Mid-training probe for eval.every; returns the accuracy.
  std::function<double(const TrainerState&)> probe;
};

struct PretextResult {
  TrainerState state;
  std::vector<MetricsRecord> records;
  std::vector<double> step_losses;
};

PretextResult run_pretext(const RunConfig& cfg, const PreparedData& data,
                          const PretextHooks& hooks = {});

struct EvalOptions {
  ProbeKind probe = ProbeKind::pinv;
  FeatureSource features = FeatureSource::backbone;
  bool with_fed = true;
  FeatureSource fed_features = FeatureSource::backbone;
  std::uint64_t seed = 0;
};

struct EvalResult {
  double accuracy = 0.0;
  std::optional<double> fed;
  std::optional<double> selected_lr;
  MetricsRecord record;
};

// extract -> probe on train -> top-1 on test (+ FED between train and test
// features).
EvalResult run_eval(const EncoderState& encoder, const Dataset& train, const Dataset& test,
                    const EvalOptions& opts);

EvalOptions eval_options(const RunConfig& cfg);

}  // namespace imix

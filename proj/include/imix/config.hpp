#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "imix/augment.hpp"
#include "imix/eval.hpp"
#include "imix/losses.hpp"
#include "imix/nn.hpp"

namespace imix {

// One experiment. Serialised as flat key=value lines with dotted keys.
struct RunConfig {
  std::string run_id = "run";
  std::string preset;  // applied before every other key

  Method method = Method::npair;
  bool imix = false;
  MixSpec mix;
  bool exclude_partner = false;
  double tau = 0.2;

  std::size_t batch_size = 256;
  std::size_t epochs = 200;
  double lr = 0.125;  // scaled by batch_size / 256
  double warmup_epochs = 10;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  double ema_momentum = 0.999;
  std::size_t bank_k = 0;
  std::uint64_t seed = 0;

  // Pretext data: a CSV / manifest path, or synthetic blobs when empty.
  std::string data_pretext;
  std::string data_downstream;  // empty = evaluate on the pretext dataset
  bool data_normalize = true;
  std::size_t synth_n = 5000;
  std::size_t synth_classes = 20;
  std::size_t synth_d_signal = 16;
  std::size_t synth_d_noise = 16;
  double synth_sep = 3.0;
  std::uint64_t synth_seed = 7;
  double split_train_fraction = 0.8;
  std::uint64_t split_seed = 11;

  AugmentPolicy augment;

  std::vector<std::size_t> model_widths{128, 128, 128};
  bool model_batch_norm = true;
  std::size_t model_maxout_sets = 1;  // > 1 makes the last backbone layer maxout
  std::size_t proj_hidden = 128;
  std::size_t proj_out = 64;
  std::size_t pred_hidden = 128;

  ProbeKind eval_probe = ProbeKind::pinv;
  FeatureSource eval_features = FeatureSource::backbone;
  FeatureSource fed_features = FeatureSource::backbone;
  bool eval_at_end = true;
  bool eval_fed = true;
  std::size_t eval_every = 0;        // probe every k epochs during pretext (0 = off)
  std::size_t checkpoint_every = 0;  // extra checkpoints every k epochs (0 = off)
  bool log_wallclock = false;

  // Field-level ConfigError for inconsistent settings.
  void validate() const;
  bool uses_ema() const { return method == Method::moco || method == Method::byol; }
};

// Named defaults: "tabular" (large maxout MLP recipe) and "desk" (small MLP).
void apply_preset(RunConfig& cfg, const std::string& name);
std::vector<std::string> preset_names();

// Sets one key; ConfigError naming the key on unknown keys or bad values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg);
std::string config_to_text(const RunConfig& cfg);

// "key=value" lines, '#' comments. The preset key (from the text or the
// overrides) is applied first, then the text, then overrides in order.
RunConfig parse_config(const std::string& text,
                       const std::vector<std::string>& overrides = {},
                       const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path,
                      const std::vector<std::string>& overrides = {});

EncoderSpec encoder_spec(const RunConfig& cfg, std::size_t input_dim);
Schedule pretext_schedule(const RunConfig& cfg);

}  // namespace imix

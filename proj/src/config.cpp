#include "imix/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "imix/data.hpp"
#include "imix/errors.hpp"

namespace imix {

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw ConfigError(key + ": invalid value '" + value + "' (expected " + want + ")");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "true or false");
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    bad_value(key, v, "a nonnegative integer");
  }
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(to_u64(key, v));
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    bad_value(key, v, "a finite number");
  }
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(std::uint64_t v, int) { return std::to_string(v); }

std::vector<std::size_t> to_widths(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::istringstream in(v);
  std::string part;
  while (std::getline(in, part, ',')) out.push_back(to_size(key, trim(part)));
  if (out.empty()) bad_value(key, v, "comma-separated layer widths");
  return out;
}

std::string fmt_widths(const std::vector<std::size_t>& w) {
  std::string out;
  for (std::size_t i = 0; i < w.size(); ++i) out += (i ? "," : "") + std::to_string(w[i]);
  return out;
}

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define IMIX_FIELD_SIZE(KEY, MEMBER)                                            \
  Field {                                                                       \
    KEY, [](const RunConfig& c) { return fmt(c.MEMBER); },                      \
        [](RunConfig& c, const std::string& v) { c.MEMBER = to_size(KEY, v); } \
  }
#define IMIX_FIELD_U64(KEY, MEMBER)                                            \
  Field {                                                                      \
    KEY, [](const RunConfig& c) { return fmt(c.MEMBER, 0); },                  \
        [](RunConfig& c, const std::string& v) { c.MEMBER = to_u64(KEY, v); } \
  }
#define IMIX_FIELD_DOUBLE(KEY, MEMBER)                                            \
  Field {                                                                         \
    KEY, [](const RunConfig& c) { return fmt(c.MEMBER); },                        \
        [](RunConfig& c, const std::string& v) { c.MEMBER = to_double(KEY, v); } \
  }
#define IMIX_FIELD_BOOL(KEY, MEMBER)                                            \
  Field {                                                                       \
    KEY, [](const RunConfig& c) { return fmt(c.MEMBER); },                      \
        [](RunConfig& c, const std::string& v) { c.MEMBER = to_bool(KEY, v); } \
  }
#define IMIX_FIELD_STRING(KEY, MEMBER)                                \
  Field {                                                             \
    KEY, [](const RunConfig& c) { return c.MEMBER; },                 \
        [](RunConfig& c, const std::string& v) { c.MEMBER = v; }      \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      IMIX_FIELD_STRING("run_id", run_id),
      IMIX_FIELD_STRING("preset", preset),
      Field{"method", [](const RunConfig& c) { return std::string(method_name(c.method)); },
            [](RunConfig& c, const std::string& v) { c.method = parse_method(v); }},
      IMIX_FIELD_BOOL("imix", imix),
      Field{"mix.operator", [](const RunConfig& c) { return std::string(mix_operator_name(c.mix.op)); },
            [](RunConfig& c, const std::string& v) { c.mix.op = parse_mix_operator(v); }},
      IMIX_FIELD_DOUBLE("mix.alpha", mix.alpha),
      Field{"mix.granularity",
            [](const RunConfig& c) { return std::string(granularity_name(c.mix.granularity)); },
            [](RunConfig& c, const std::string& v) { c.mix.granularity = parse_granularity(v); }},
      IMIX_FIELD_BOOL("mix.exclude_partner", exclude_partner),
      IMIX_FIELD_DOUBLE("tau", tau),
      IMIX_FIELD_SIZE("batch_size", batch_size),
      IMIX_FIELD_SIZE("epochs", epochs),
      IMIX_FIELD_DOUBLE("lr", lr),
      IMIX_FIELD_DOUBLE("warmup_epochs", warmup_epochs),
      IMIX_FIELD_DOUBLE("sgd_momentum", sgd_momentum),
      IMIX_FIELD_DOUBLE("weight_decay", weight_decay),
      IMIX_FIELD_DOUBLE("ema_momentum", ema_momentum),
      IMIX_FIELD_SIZE("bank_k", bank_k),
      IMIX_FIELD_U64("seed", seed),
      IMIX_FIELD_STRING("data.pretext", data_pretext),
      IMIX_FIELD_STRING("data.downstream", data_downstream),
      IMIX_FIELD_BOOL("data.normalize", data_normalize),
      IMIX_FIELD_SIZE("synth.n", synth_n),
      IMIX_FIELD_SIZE("synth.classes", synth_classes),
      IMIX_FIELD_SIZE("synth.d_signal", synth_d_signal),
      IMIX_FIELD_SIZE("synth.d_noise", synth_d_noise),
      IMIX_FIELD_DOUBLE("synth.sep", synth_sep),
      IMIX_FIELD_U64("synth.seed", synth_seed),
      IMIX_FIELD_DOUBLE("split.train_fraction", split_train_fraction),
      IMIX_FIELD_U64("split.seed", split_seed),
      IMIX_FIELD_DOUBLE("augment.mask_prob", augment.mask_prob),
      IMIX_FIELD_DOUBLE("augment.noise_sigma", augment.noise_sigma),
      IMIX_FIELD_BOOL("augment.inputmix", augment.inputmix),
      IMIX_FIELD_BOOL("augment.inputmix_both_views", augment.inputmix_both_views),
      Field{"model.widths", [](const RunConfig& c) { return fmt_widths(c.model_widths); },
            [](RunConfig& c, const std::string& v) { c.model_widths = to_widths("model.widths", v); }},
      IMIX_FIELD_BOOL("model.batch_norm", model_batch_norm),
      IMIX_FIELD_SIZE("model.maxout_sets", model_maxout_sets),
      IMIX_FIELD_SIZE("model.proj_hidden", proj_hidden),
      IMIX_FIELD_SIZE("model.proj_out", proj_out),
      IMIX_FIELD_SIZE("model.pred_hidden", pred_hidden),
      Field{"eval.probe", [](const RunConfig& c) { return std::string(probe_kind_name(c.eval_probe)); },
            [](RunConfig& c, const std::string& v) { c.eval_probe = parse_probe_kind(v); }},
      Field{"eval.features",
            [](const RunConfig& c) { return std::string(feature_source_name(c.eval_features)); },
            [](RunConfig& c, const std::string& v) { c.eval_features = parse_feature_source(v); }},
      Field{"eval.fed_features",
            [](const RunConfig& c) { return std::string(feature_source_name(c.fed_features)); },
            [](RunConfig& c, const std::string& v) { c.fed_features = parse_feature_source(v); }},
      IMIX_FIELD_BOOL("eval.at_end", eval_at_end),
      IMIX_FIELD_BOOL("eval.fed", eval_fed),
      IMIX_FIELD_SIZE("eval.every", eval_every),
      IMIX_FIELD_SIZE("checkpoint.every", checkpoint_every),
      IMIX_FIELD_BOOL("log_wallclock", log_wallclock),
  };
  return table;
}

#undef IMIX_FIELD_SIZE
#undef IMIX_FIELD_U64
#undef IMIX_FIELD_DOUBLE
#undef IMIX_FIELD_BOOL
#undef IMIX_FIELD_STRING

std::pair<std::string, std::string> split_assignment(const std::string& line,
                                                     const std::string& where) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) throw ConfigError(where + ": expected key=value, got '" + line + "'");
  std::string key = trim(line.substr(0, eq));
  if (key.empty()) throw ConfigError(where + ": empty key");
  return {key, trim(line.substr(eq + 1))};
}

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw ConfigError(key + ": " + why);
  };
  if (method != Method::byol && !(tau > 0.0)) fail("tau", "must be positive");
  if (batch_size < 2) fail("batch_size", "must be at least 2 for contrastive losses");
  if (!(lr >= 0.0)) fail("lr", "must be >= 0");
  if (!(warmup_epochs >= 0.0)) fail("warmup_epochs", "must be >= 0");
  if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0)) fail("sgd_momentum", "must be in [0,1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay", "must be >= 0");
  if (!(ema_momentum >= 0.0 && ema_momentum < 1.0)) fail("ema_momentum", "must be in [0,1)");
  if (method == Method::moco) {
    if (bank_k == 0) fail("bank_k", "moco needs a memory bank (bank_k > 0)");
    if (bank_k < batch_size) {
      fail("bank_k", "must be >= batch_size (" + std::to_string(batch_size) +
                         ") so a batch of keys fits the bank");
    }
  } else if (bank_k != 0) {
    fail("bank_k", "only moco uses a memory bank; set bank_k=0 for " +
                       std::string(method_name(method)));
  }
  if (!(mix.alpha > 0.0)) fail("mix.alpha", "must be positive");
  if (!(split_train_fraction > 0.0 && split_train_fraction < 1.0)) {
    fail("split.train_fraction", "must be in (0,1)");
  }
  augment.validate();
  if (model_widths.empty()) fail("model.widths", "need at least one layer");
  for (std::size_t w : model_widths)
    if (w == 0) fail("model.widths", "widths must be positive");
  if (model_maxout_sets == 0) fail("model.maxout_sets", "must be >= 1");
  if (model_widths.back() % model_maxout_sets != 0) {
    fail("model.maxout_sets", "last width " + std::to_string(model_widths.back()) +
                                  " is not divisible by " + std::to_string(model_maxout_sets));
  }
  if (proj_hidden == 0 || proj_out == 0) fail("model.proj_hidden", "projection dims must be positive");
  if (method == Method::byol && pred_hidden == 0) fail("model.pred_hidden", "must be positive");
  if (data_pretext.empty()) {
    if (synth_classes < 2) fail("synth.classes", "need at least 2 classes");
    if (synth_d_signal == 0) fail("synth.d_signal", "must be positive");
    if (synth_n < 2 * batch_size) fail("synth.n", "too small for the batch size");
  }
}

std::vector<std::string> preset_names() { return {"desk", "tabular"}; }

void apply_preset(RunConfig& cfg, const std::string& name) {
  if (name.empty()) return;
  if (name == "desk") {
    cfg.model_widths = {128, 128, 128};
    cfg.model_batch_norm = true;
    cfg.model_maxout_sets = 1;
    cfg.proj_hidden = 128;
    cfg.proj_out = 64;
    cfg.pred_hidden = 128;
    cfg.tau = 0.2;
    cfg.batch_size = 256;
    cfg.epochs = 200;
    cfg.lr = 0.125;
    cfg.warmup_epochs = 10;
    cfg.sgd_momentum = 0.9;
    cfg.weight_decay = 1e-4;
    cfg.ema_momentum = 0.999;
    cfg.mix.alpha = 1.0;
    cfg.augment = AugmentPolicy{};
    cfg.eval_probe = ProbeKind::pinv;
  } else if (name == "tabular") {
    cfg.model_widths = {2048, 2048, 4096, 4096, 8192};
    cfg.model_batch_norm = true;
    cfg.model_maxout_sets = 4;
    cfg.proj_hidden = 2048;
    cfg.proj_out = 128;
    cfg.pred_hidden = 2048;
    cfg.tau = 0.1;
    cfg.batch_size = 512;
    cfg.epochs = 500;
    cfg.lr = 0.125;
    cfg.warmup_epochs = 10;
    cfg.sgd_momentum = 0.9;
    cfg.weight_decay = 1e-4;
    cfg.ema_momentum = 0.999;
    cfg.mix.alpha = 2.0;
    cfg.augment = AugmentPolicy{};
    cfg.augment.mask_prob = 0.2;
    cfg.eval_probe = ProbeKind::pinv;
  } else {
    throw ConfigError("preset: unknown preset '" + name + "' (expected desk, tabular)");
  }
  cfg.preset = name;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const Field& f : fields()) {
    if (key == f.key) {
      try {
        f.set(cfg, value);
      } catch (const ConfigError& e) {
        const std::string msg = e.what();
        if (msg.rfind(key, 0) == 0) throw;
        throw ConfigError(key + ": " + msg);
      }
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const Field& f : fields()) out.emplace_back(f.key, f.get(cfg));
  return out;
}

std::string config_to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_entries(cfg)) out += k + "=" + v + "\n";
  return out;
}

RunConfig parse_config(const std::string& text, const std::vector<std::string>& overrides,
                       const std::string& source) {
  std::vector<std::pair<std::string, std::string>> file_entries;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    file_entries.push_back(split_assignment(line, source + " line " + std::to_string(line_no)));
  }
  std::vector<std::pair<std::string, std::string>> cli_entries;
  for (const std::string& o : overrides) cli_entries.push_back(split_assignment(o, "--set"));

  std::string preset;
  for (const auto* list : {&file_entries, &cli_entries})
    for (const auto& [k, v] : *list)
      if (k == "preset") preset = v;

  RunConfig cfg;
  apply_preset(cfg, preset);
  for (const auto* list : {&file_entries, &cli_entries})
    for (const auto& [k, v] : *list)
      if (k != "preset") set_config_value(cfg, k, v);
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), overrides, path.string());
}

EncoderSpec encoder_spec(const RunConfig& cfg, std::size_t input_dim) {
  EncoderSpec spec;
  spec.input_dim = input_dim;
  std::size_t in = input_dim;
  for (std::size_t i = 0; i < cfg.model_widths.size(); ++i) {
    const bool last = i + 1 == cfg.model_widths.size();
    LayerSpec l{in, cfg.model_widths[i], Activation::relu, 1, cfg.model_batch_norm};
    if (last && cfg.model_maxout_sets > 1) {
      l.activation = Activation::maxout;
      l.maxout_sets = cfg.model_maxout_sets;
    }
    spec.backbone.push_back(l);
    in = l.effective_out();
  }
  spec.proj_hidden = cfg.proj_hidden;
  spec.proj_out = cfg.proj_out;
  spec.predictor = cfg.method == Method::byol;
  spec.pred_hidden = cfg.pred_hidden;
  spec.ema = cfg.uses_ema();
  return spec;
}

Schedule pretext_schedule(const RunConfig& cfg) {
  Schedule s;
  s.base_lr = cfg.lr;
  s.batch_size = cfg.batch_size;
  s.total_epochs = static_cast<double>(cfg.epochs);
  // Short runs keep the warmup shorter than the run itself.
  s.warmup_epochs = cfg.warmup_epochs < s.total_epochs ? cfg.warmup_epochs : 0.1 * s.total_epochs;
  s.mode = ScheduleMode::cosine;
  return s;
}

}  // namespace imix

// imix: pretext training, linear evaluation, FED and the invariant suite.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "imix/checkpoint.hpp"
#include "imix/config.hpp"
#include "imix/data.hpp"
#include "imix/errors.hpp"
#include "imix/eval.hpp"
#include "imix/metrics.hpp"
#include "imix/trainer.hpp"
#include "imix/verify.hpp"

namespace fs = std::filesystem;
using namespace imix;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitRuntime = 2;

fs::path output_root() {
  const char* env = std::getenv("IMIX_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw IoError("cannot write '" + path.string() + "'");
}

// Config stored with the checkpoint, with command-line overrides on top.
RunConfig checkpoint_config(const Checkpoint& ckpt, const std::vector<std::string>& overrides) {
  const auto it = ckpt.meta.find("config");
  return parse_config(it == ckpt.meta.end() ? std::string() : it->second, overrides, "checkpoint");
}

Checkpoint require_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw IngestError("checkpoint '" + path.string() + "' does not exist");
  return load_checkpoint(path);
}

Matrix standardized(const Dataset& ds, const Standardizer& st) {
  if (st.empty()) return ds.features;
  if (st.mean.size() != ds.dim()) {
    throw ShapeError("dataset '" + ds.name + "' has " + std::to_string(ds.dim()) +
                     " features but the encoder was trained on " + std::to_string(st.mean.size()));
  }
  return st.apply(ds.features);
}

struct PretrainArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
};

int cmd_pretrain(const PretrainArgs& a) {
  const RunConfig cfg =
      a.config.empty() ? parse_config("", a.sets, "<defaults>") : load_config(a.config, a.sets);
  const fs::path out = a.out.empty() ? output_root() / cfg.run_id : fs::path(a.out);
  fs::create_directories(out);
  const std::string resolved = config_to_text(cfg);
  write_text(out / "config.resolved", resolved);

  const PreparedData data = prepare_pretext_data(cfg);
  MetricsWriter metrics(out / "metrics.jsonl", cfg.run_id, true);

  auto make_ckpt = [&](const TrainerState& t) {
    Checkpoint ckpt{t.encoder, data.standardizer, {}};
    ckpt.meta["config"] = resolved;
    ckpt.meta["run_id"] = cfg.run_id;
    return ckpt;
  };
  const EvalOptions eopts = eval_options(cfg);
  PretextHooks hooks;
  hooks.on_record = [&](const MetricsRecord& r) { metrics.write(r); };
  hooks.on_checkpoint = [&](const TrainerState& t, std::size_t epoch) {
    const fs::path name = epoch == cfg.epochs ? fs::path("checkpoint.json")
                                              : fs::path("checkpoint-" + std::to_string(epoch) + ".json");
    save_checkpoint(make_ckpt(t), out / name);
  };
  if (data.train.has_labels()) {
    hooks.probe = [&](const TrainerState& t) {
      EvalOptions o = eopts;
      o.with_fed = false;
      return run_eval(t.encoder, data.train, data.test, o).accuracy;
    };
  }
  const PretextResult res = run_pretext(cfg, data, hooks);

  if (cfg.eval_at_end && data.train.has_labels()) {
    EvalResult ev = run_eval(res.state.encoder, data.train, data.test, eopts);
    ev.record.epoch = cfg.epochs;
    metrics.write(ev.record);
    std::printf("top1 %.4f\n", ev.accuracy);
    if (ev.fed) std::printf("fed %.10g\n", *ev.fed);
  }
  std::printf("wrote %s\n", (out / "checkpoint.json").string().c_str());
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string probe;
  std::string features;
  std::string metrics;
  std::vector<std::string> sets;
};

int cmd_linear_eval(const EvalArgs& a) {
  const Checkpoint ckpt = require_checkpoint(a.checkpoint);
  const RunConfig cfg = checkpoint_config(ckpt, a.sets);
  EvalOptions o = eval_options(cfg);
  o.with_fed = false;
  if (!a.probe.empty()) o.probe = parse_probe_kind(a.probe);
  if (!a.features.empty()) o.features = parse_feature_source(a.features);
  const PreparedData data =
      prepare_eval_data(cfg, ckpt.standardizer, a.data.empty() ? cfg.data_downstream : a.data);
  EvalResult ev = run_eval(ckpt.state, data.train, data.test, o);
  ev.record.extra["probe_pinv"] = o.probe == ProbeKind::pinv ? 1.0 : 0.0;
  const fs::path metrics_path =
      a.metrics.empty() ? fs::path(a.checkpoint).parent_path() / "metrics.jsonl" : fs::path(a.metrics);
  MetricsWriter(metrics_path, cfg.run_id, false).write(ev.record);
  std::printf("%.4f\n", ev.accuracy);
  return kExitOk;
}

struct FedArgs {
  std::string checkpoint;
  std::string data;
  std::string train;
  std::string test;
  std::string features;
  std::vector<std::string> sets;
};

int cmd_fed(const FedArgs& a) {
  const Checkpoint ckpt = require_checkpoint(a.checkpoint);
  const RunConfig cfg = checkpoint_config(ckpt, a.sets);
  const FeatureSource src = a.features.empty() ? cfg.fed_features : parse_feature_source(a.features);
  Matrix ftr, fte;
  if (!a.train.empty() || !a.test.empty()) {
    if (a.train.empty() || a.test.empty()) throw ConfigError("fed: --train and --test go together");
    ftr = extract(ckpt.state, standardized(load_dataset(a.train), ckpt.standardizer), src);
    fte = extract(ckpt.state, standardized(load_dataset(a.test), ckpt.standardizer), src);
  } else {
    const PreparedData data =
        prepare_eval_data(cfg, ckpt.standardizer, a.data.empty() ? cfg.data_downstream : a.data);
    ftr = extract(ckpt.state, data.train.features, src);
    fte = extract(ckpt.state, data.test.features, src);
  }
  const double value = fed(ftr, fte);
  std::printf("%.10f %.6f\n", value, value * 1e4);
  return kExitOk;
}

struct ExportArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string features;
  std::vector<std::string> sets;
};

int cmd_export(const ExportArgs& a) {
  const Checkpoint ckpt = require_checkpoint(a.checkpoint);
  const RunConfig cfg = checkpoint_config(ckpt, a.sets);
  const FeatureSource src = a.features.empty() ? cfg.eval_features : parse_feature_source(a.features);
  Dataset ds;
  if (!a.data.empty()) {
    ds = load_dataset(a.data);
  } else {
    ds = prepare_pretext_data(cfg).train;  // already standardised
  }
  const Matrix x = a.data.empty() ? ds.features : standardized(ds, ckpt.standardizer);
  const Matrix f = extract(ckpt.state, x, src);
  export_embeddings(f, ds.labels ? &*ds.labels : nullptr, a.out);
  std::printf("wrote %zu x %zu embeddings to %s\n", f.rows(), f.cols(), a.out.c_str());
  return kExitOk;
}

struct SynthArgs {
  std::string out;
  std::size_t n = 5000;
  std::size_t classes = 20;
  std::size_t d_signal = 16;
  std::size_t d_noise = 16;
  double sep = 3.0;
  std::uint64_t seed = 7;
};

int cmd_synth(const SynthArgs& a) {
  Rng rng(a.seed);
  const Dataset ds = synth_blobs(rng, a.n, a.classes, a.d_signal, a.d_noise, a.sep);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_csv(ds, out);
  std::printf("wrote %zu rows, %zu features, %zu classes to %s\n", ds.size(), ds.dim(),
              ds.num_classes, a.out.c_str());
  return kExitOk;
}

struct VerifyArgs {
  std::uint64_t seed = VerifyOptions{}.seed;
  double perturb = 0.0;
  std::vector<std::string> only;
};

int cmd_verify(const VerifyArgs& a) {
  VerifyOptions o;
  o.seed = a.seed;
  o.linearity_perturbation = a.perturb;
  o.only = a.only;
  const VerifyReport report = run_verify(o);
  for (const auto& c : report.checks) {
    std::printf("%-4s %-24s cases=%-6zu worst=%.3e  %.2fs%s%s\n", c.passed ? "ok" : "FAIL",
                c.name.c_str(), c.cases, c.worst, c.seconds, c.detail.empty() ? "" : "  ",
                c.detail.c_str());
  }
  std::printf("verify: %zu passed, %zu failed\n", report.passed(), report.failed());
  for (const auto& c : report.checks) {
    if (!c.passed) std::fprintf(stderr, "failed invariant: %s\n", c.name.c_str());
  }
  return report.ok() ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"i-Mix contrastive pretraining and evaluation"};
  app.require_subcommand(1);

  PretrainArgs pa;
  auto* pretrain = app.add_subcommand("pretrain", "Run pretext training and write a checkpoint");
  pretrain->add_option("--config", pa.config, "key=value config file")->check(CLI::ExistingFile);
  pretrain->add_option("--set", pa.sets, "Override a key (key=value), repeatable");
  pretrain->add_option("--out", pa.out, "Output directory (default $IMIX_OUTPUT_ROOT/<run_id>)");

  EvalArgs ea;
  auto* leval = app.add_subcommand("linear-eval", "Train a linear probe on frozen features");
  leval->add_option("--checkpoint", ea.checkpoint)->required();
  leval->add_option("--data", ea.data, "Downstream dataset (default: the pretext data)");
  leval->add_option("--probe", ea.probe, "sgd or pinv");
  leval->add_option("--features", ea.features, "backbone or projection");
  leval->add_option("--metrics", ea.metrics, "Metrics file to append to");
  leval->add_option("--set", ea.sets, "Override a config key");

  FedArgs fa;
  auto* fedc = app.add_subcommand("fed", "Frechet embedding distance between train and test");
  fedc->add_option("--checkpoint", fa.checkpoint)->required();
  fedc->add_option("--data", fa.data, "Dataset to split (default: the pretext data)");
  fedc->add_option("--train", fa.train, "Explicit train set");
  fedc->add_option("--test", fa.test, "Explicit test set");
  fedc->add_option("--features", fa.features, "backbone or projection");
  fedc->add_option("--set", fa.sets, "Override a config key");

  ExportArgs xa;
  auto* exp = app.add_subcommand("export-embeddings", "Write frozen features to CSV");
  exp->add_option("--checkpoint", xa.checkpoint)->required();
  exp->add_option("--data", xa.data, "Dataset (default: pretext train split)");
  exp->add_option("--out", xa.out)->required();
  exp->add_option("--features", xa.features, "backbone or projection");
  exp->add_option("--set", xa.sets, "Override a config key");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth-data", "Generate the synthetic blob benchmark");
  synth->add_option("--out", sa.out)->required();
  synth->add_option("--n", sa.n);
  synth->add_option("--classes", sa.classes);
  synth->add_option("--d-signal", sa.d_signal);
  synth->add_option("--d-noise", sa.d_noise);
  synth->add_option("--sep", sa.sep);
  synth->add_option("--seed", sa.seed);

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "Run the invariant suite");
  verify->add_option("--seed", va.seed);
  verify->add_option("--perturb-linearity", va.perturb,
                     "Offset added to mixed-label losses (harness self-test)");
  verify->add_option("--only", va.only, "Run only the named checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*pretrain) return cmd_pretrain(pa);
    if (*leval) return cmd_linear_eval(ea);
    if (*fedc) return cmd_fed(fa);
    if (*exp) return cmd_export(xa);
    if (*synth) return cmd_synth(sa);
    if (*verify) return cmd_verify(va);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitInvalid;
  } catch (const LabelError& e) {
    std::fprintf(stderr, "label error: %s\n", e.what());
    return kExitInvalid;
  } catch (const IngestError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return kExitInvalid;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "shape error: %s\n", e.what());
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitInvalid;
}

#include "imix/trainer.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "imix/errors.hpp"
#include "imix/linalg.hpp"

namespace imix {

namespace {

Dataset load_pretext(const RunConfig& cfg) {
  if (!cfg.data_pretext.empty()) return load_dataset(cfg.data_pretext);
  Rng rng(cfg.synth_seed);
  return synth_blobs(rng, cfg.synth_n, cfg.synth_classes, cfg.synth_d_signal, cfg.synth_d_noise,
                     cfg.synth_sep);
}

PreparedData split_and_standardize(const Dataset& ds, const RunConfig& cfg,
                                   const Standardizer* fixed) {
  SplitSpec spec;
  spec.train_fraction = cfg.split_train_fraction;
  spec.test_fraction = 1.0 - cfg.split_train_fraction;
  spec.seed = cfg.split_seed;
  auto [train, test] = split(ds, spec);
  PreparedData out;
  if (fixed) {
    out.standardizer = *fixed;
  } else if (cfg.data_normalize) {
    out.standardizer = Standardizer::fit(train.features);
  }
  if (!out.standardizer.empty()) {
    train.features = out.standardizer.apply(train.features);
    test.features = out.standardizer.apply(test.features);
  }
  out.train = std::move(train);
  out.test = std::move(test);
  return out;
}

std::string lambda_text(const MixPlan& plan) {
  if (plan.lambda.empty()) return "n/a";
  double lo = plan.lambda.front();
  double hi = lo;
  for (double l : plan.lambda) {
    lo = std::min(lo, l);
    hi = std::max(hi, l);
  }
  std::ostringstream s;
  s << lo;
  if (hi != lo) s << ".." << hi;
  return s.str();
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

PreparedData prepare_pretext_data(const RunConfig& cfg) {
  Dataset ds = load_pretext(cfg);
  ds.validate();
  return split_and_standardize(ds, cfg, nullptr);
}

PreparedData prepare_eval_data(const RunConfig& cfg, const Standardizer& standardizer,
                               const std::string& downstream_path) {
  Dataset ds = downstream_path.empty() ? load_pretext(cfg) : load_dataset(downstream_path);
  ds.validate();
  if (!ds.has_labels()) {
    throw ConfigError("evaluation dataset '" + ds.name + "' has no labels");
  }
  if (!standardizer.empty() && standardizer.mean.size() != ds.dim()) {
    throw ShapeError("evaluation dataset '" + ds.name + "' has " + std::to_string(ds.dim()) +
                     " features but the encoder was trained on " +
                     std::to_string(standardizer.mean.size()));
  }
  return split_and_standardize(ds, cfg, standardizer.empty() ? nullptr : &standardizer);
}

TrainerState init_trainer(const RunConfig& cfg, std::size_t input_dim, const SpatialShape& spatial) {
  cfg.validate();
  if (cfg.imix) cfg.mix.validate(spatial);
  TrainerState t;
  t.cfg = cfg;
  t.spatial = spatial;
  const Rng root(cfg.seed);
  Rng init = root.child(kInitStream);
  t.encoder = make_encoder(encoder_spec(cfg, input_dim), init);
  if (cfg.method == Method::moco) {
    Rng bank_rng = root.child(kBankStream);
    t.bank = MemoryBank(cfg.bank_k, cfg.proj_out, bank_rng);
  }
  t.aug_rng = root.child(kAugmentStream);
  return t;
}

StepResult pretext_step(TrainerState& t, const Matrix& x, std::span<const int> labels, double lr) {
  const RunConfig& c = t.cfg;
  const std::size_t n = x.rows();
  if (n < 2) throw ConfigError("pretext_step: batch needs at least 2 samples");
  const bool supervised = c.method == Method::supclr || c.method == Method::sup_npair;
  if (supervised && labels.size() != n) {
    throw LabelError(std::string(method_name(c.method)) + " needs class labels for every sample");
  }

  const ViewBatch views = make_views(t.aug_rng, x, c.augment);
  StepResult res;
  res.lr = lr;
  res.plan = c.imix ? sample_plan(t.aug_rng, n, c.mix) : MixPlan::identity(n);
  auto mixed = [&](const Matrix& v) { return apply_mix(t.aug_rng, v, res.plan, c.mix, t.spatial); };
  const ImixOptions opts{c.exclude_partner};

  EncoderState& enc = t.encoder;
  std::vector<Matrix> grads = enc.zero_grads();
  LossOutput out;
  Matrix bank_keys;

  auto context = [&] {
    return "pretext step " + std::to_string(t.steps) + " (lambda " + lambda_text(res.plan) +
           ", lr " + std::to_string(lr) + ")";
  };
  try {
    switch (c.method) {
      case Method::npair:
      case Method::sup_npair: {
        EncoderCache ca, ck;
        const Matrix za = forward(enc, c.imix ? mixed(views.view1) : views.view1, Mode::train, &ca);
        const Matrix zk = forward(enc, views.view2, Mode::train, &ck);
        if (c.imix) {
          ImixInputs in;
          in.method = c.method;
          in.anchors = za;
          in.keys = zk;
          in.labels.assign(labels.begin(), labels.end());
          in.tau = c.tau;
          out = imix(in, res.plan, opts);
        } else if (c.method == Method::npair) {
          out = npair(za, zk, identity_labels(n), c.tau);
        } else {
          out = sup_npair(za, zk, labels, c.tau);
        }
        backward(enc, ca, out.grad_anchor, grads);
        backward(enc, ck, *out.grad_keys, grads);
        break;
      }
      case Method::simclr:
      case Method::supclr: {
        std::vector<int> labels2;
        if (supervised) {
          labels2.assign(labels.begin(), labels.end());
          labels2.insert(labels2.end(), labels.begin(), labels.end());
        }
        const Matrix both = vstack(views.view1, views.view2);
        if (!c.imix) {
          EncoderCache cf;
          const Matrix f = forward(enc, both, Mode::train, &cf);
          out = c.method == Method::simclr ? simclr(f, simclr_labels(n), c.tau)
                                           : supclr(f, labels2, c.tau);
          backward(enc, cf, out.grad_anchor, grads);
        } else {
          EncoderCache ca, ck;
          const Matrix xm = vstack(mixed(views.view1), mixed(views.view2));
          ImixInputs in;
          in.method = c.method;
          in.anchors = forward(enc, xm, Mode::train, &ca);
          in.keys = forward(enc, both, Mode::train, &ck);
          in.labels = std::move(labels2);
          in.tau = c.tau;
          out = imix(in, res.plan, opts);
          backward(enc, ca, out.grad_anchor, grads);
          backward(enc, ck, *out.grad_keys, grads);
        }
        break;
      }
      case Method::moco: {
        EncoderCache ca;
        // Keys come from the shadow before any update of this step.
        bank_keys = normalize_rows(ema_forward(enc, views.view2)).unit;
        const Matrix q = forward(enc, c.imix ? mixed(views.view1) : views.view1, Mode::train, &ca);
        if (c.imix) {
          ImixInputs in;
          in.method = Method::moco;
          in.anchors = q;
          in.keys = bank_keys;
          in.bank = &*t.bank;
          in.tau = c.tau;
          out = imix(in, res.plan, opts);
        } else {
          out = moco(q, bank_keys, *t.bank, moco_labels(n, t.bank->size()), c.tau);
        }
        backward(enc, ca, out.grad_anchor, grads);
        break;
      }
      case Method::byol: {
        EncoderCache ca;
        const Matrix target = ema_forward(enc, views.view2);
        const Matrix z = forward(enc, c.imix ? mixed(views.view1) : views.view1, Mode::train, &ca);
        const Matrix p = predict_head(enc, z, &ca);
        if (c.imix) {
          ImixInputs in;
          in.method = Method::byol;
          in.anchors = p;
          in.keys = target;
          out = imix(in, res.plan, opts);
        } else {
          out = byol(p, target, identity_labels(n));
        }
        backward(enc, ca, out.grad_anchor, grads);
        break;
      }
    }
  } catch (const NumericError& e) {
    throw NumericError(context() + ": " + e.what());
  }

  if (!std::isfinite(out.value)) {
    throw NumericError(context() + ": non-finite loss");
  }
  res.loss = out.value;
  sgd_step(enc, grads, lr, c.sgd_momentum, c.weight_decay);
  if (c.uses_ema()) ema_update(enc, c.ema_momentum);
  if (c.method == Method::moco) t.bank->push(bank_keys);
  ++t.steps;
  return res;
}

PretextResult run_pretext(const RunConfig& cfg, const PreparedData& data, const PretextHooks& hooks) {
  const Dataset& train = data.train;
  const bool supervised = cfg.method == Method::supclr || cfg.method == Method::sup_npair;
  if (supervised && !train.has_labels()) {
    throw ConfigError("method " + std::string(method_name(cfg.method)) +
                      " needs a labeled pretext dataset");
  }
  PretextResult res{init_trainer(cfg, train.dim(), train.spatial), {}, {}};
  TrainerState& t = res.state;
  const Schedule sched = pretext_schedule(cfg);
  const Rng batch_rng = Rng(cfg.seed).child(kBatchStream);
  const auto start = std::chrono::steady_clock::now();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto blocks = batches(batch_rng, train.size(), cfg.batch_size, true, epoch);
    std::vector<double> losses;
    std::vector<double> lambdas;
    double lr = 0.0;
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      lr = lr_at(sched, static_cast<double>(epoch) +
                            static_cast<double>(k) / static_cast<double>(blocks.size()));
      const Matrix x = train.features.gather_rows(blocks[k]);
      std::vector<int> y;
      if (train.labels) {
        y.reserve(blocks[k].size());
        for (std::size_t i : blocks[k]) y.push_back((*train.labels)[i]);
      }
      const StepResult step = pretext_step(t, x, y, lr);
      losses.push_back(step.loss);
      lambdas.push_back(mean_of(step.plan.lambda));
      res.step_losses.push_back(step.loss);
    }
    MetricsRecord rec;
    rec.stage = "pretext";
    rec.epoch = epoch + 1;
    rec.loss = mean_of(losses);
    rec.lr = lr;
    if (cfg.imix) rec.lambda_mean = mean_of(lambdas);
    if (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 && hooks.probe) {
      rec.probe_accuracy = hooks.probe(t);
    }
    if (cfg.log_wallclock) {
      rec.wallclock_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    res.records.push_back(rec);
    if (hooks.on_record) hooks.on_record(rec);
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 &&
        epoch + 1 != cfg.epochs && hooks.on_checkpoint) {
      hooks.on_checkpoint(t, epoch + 1);
    }
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(t, cfg.epochs);
  return res;
}

EvalOptions eval_options(const RunConfig& cfg) {
  EvalOptions o;
  o.probe = cfg.eval_probe;
  o.features = cfg.eval_features;
  o.with_fed = cfg.eval_fed;
  o.fed_features = cfg.fed_features;
  o.seed = cfg.seed;
  return o;
}

EvalResult run_eval(const EncoderState& encoder, const Dataset& train, const Dataset& test,
                    const EvalOptions& opts) {
  const std::size_t want = encoder.online.backbone.in_dim();
  for (const Dataset* d : {&train, &test}) {
    if (d->dim() != want) {
      throw ShapeError("dataset '" + d->name + "' has " + std::to_string(d->dim()) +
                       " features, encoder input is " + std::to_string(want));
    }
    if (!d->has_labels()) throw ConfigError("dataset '" + d->name + "' has no labels");
  }
  const std::size_t classes = std::max(train.num_classes, test.num_classes);
  const Matrix ftr = extract(encoder, train.features, opts.features);
  const Matrix fte = extract(encoder, test.features, opts.features);
  EvalResult res;
  LinearProbe probe;
  if (opts.probe == ProbeKind::pinv) {
    probe = probe_pinv(ftr, *train.labels, classes);
  } else {
    ProbeSgdOptions po;
    po.seed = opts.seed;
    ProbeSgdResult r = probe_sgd(ftr, *train.labels, classes, po);
    res.selected_lr = r.selected_lr;
    probe = std::move(r.probe);
  }
  res.accuracy = top1(probe, fte, *test.labels);
  if (opts.with_fed) {
    if (opts.fed_features == opts.features) {
      res.fed = fed(ftr, fte);
    } else {
      res.fed = fed(extract(encoder, train.features, opts.fed_features),
                    extract(encoder, test.features, opts.fed_features));
    }
  }
  res.record.stage = "eval";
  res.record.epoch = encoder.step;
  res.record.probe_accuracy = res.accuracy;
  res.record.fed = res.fed;
  if (res.selected_lr) res.record.extra["probe_lr"] = *res.selected_lr;
  return res;
}

}  // namespace imix

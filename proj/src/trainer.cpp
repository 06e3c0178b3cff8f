#include "udab/trainer.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include "udab/error.hpp"
#include "udab/io.hpp"
#include "udab/metrics.hpp"
#include "udab/rng.hpp"

namespace udab {

SyntheticSpec DatasetRef::default_synthetic_spec() {
  SyntheticSpec spec;
  spec.name = "desk-rotation";
  spec.num_classes = 5;
  spec.samples_per_domain = 2000;
  spec.feature_dim = 2;
  spec.shift = ShiftSpec{ShiftFamily::kRotation, 35.0, 0};
  spec.seed = 0;
  return spec;
}

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError("optimizer.kind", "expected sgd or adam, got '" + std::string(name) + "'");
}

std::string_view to_string(LrSchedule schedule) { return schedule == LrSchedule::kCosine ? "cosine" : "constant"; }

LrSchedule parse_lr_schedule(std::string_view name) {
  if (name == "cosine") return LrSchedule::kCosine;
  if (name == "constant") return LrSchedule::kConstant;
  throw ConfigError("optimizer.schedule", "expected cosine or constant, got '" + std::string(name) + "'");
}

std::string_view to_string(EarlyStop mode) {
  switch (mode) {
    case EarlyStop::kOff: return "off";
    case EarlyStop::kTargetTest: return "target-test";
    case EarlyStop::kSourceValidation: return "source-validation";
  }
  return "off";
}

EarlyStop parse_early_stop(std::string_view name) {
  if (name == "off" || name == "false") return EarlyStop::kOff;
  if (name == "target-test" || name == "true") return EarlyStop::kTargetTest;
  if (name == "source-validation") return EarlyStop::kSourceValidation;
  throw ConfigError("early_stop", "expected off, target-test or source-validation, got '" + std::string(name) + "'");
}

RunConfig desk_preset() { return RunConfig{}; }

RunConfig full_scale_preset() {
  RunConfig c;
  c.batch_size = 32;
  c.optimizer.kind = OptimizerKind::kSgd;
  c.optimizer.learning_rate = 0.003;
  c.optimizer.momentum = 0.9;
  c.optimizer.schedule = LrSchedule::kCosine;
  c.iterations = 10000;
  c.validate_every = 500;
  return c;
}

RunConfig preset_by_name(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "full-scale") return full_scale_preset();
  throw ConfigError("preset", "unknown preset '" + name + "' (expected desk or full-scale)");
}

namespace {

std::string num(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, end);
}

std::string num(std::int64_t v) { return std::to_string(v); }
std::string num(std::uint64_t v) { return std::to_string(v); }
std::string num(int v) { return std::to_string(v); }

void check_plan(const SamplingPlan& plan, const std::string& key) {
  if (!(plan.fraction > 0.0 && plan.fraction <= 1.0)) throw ConfigError(key + ".fraction", "must lie in (0, 1]");
  if (plan.strategy == SamplingStrategy::kSplitClass && plan.fraction < 0.5) {
    throw ConfigError(key + ".fraction", "split-class keeps at least half the data (fraction >= 0.5)");
  }
}

}  // namespace

RunConfig resolve_run_config(const RunConfig& config) {
  RunConfig c = config;
  c.method = resolve_method_config(config.method);
  if (!ArchRegistry::instance().contains(c.arch.family)) {
    throw ConfigError("arch.family", "unknown architecture '" + c.arch.family + "'");
  }
  if (c.arch.depth < 1) throw ConfigError("arch.depth", "must be >= 1");
  if (c.arch.width < 0) throw ConfigError("arch.width", "must be >= 0 (0 selects the preset)");
  if (c.arch.feature_dim < 8) throw ConfigError("arch.feature_dim", "must be >= 8");
  if (c.iterations < 0) throw ConfigError("iterations", "must be >= 0");
  const bool two_domains = c.method.name != "source-only";
  if (c.batch_size < (two_domains ? 2 : 1)) throw ConfigError("batch_size", "must be >= 2");
  if (!(c.optimizer.learning_rate > 0.0)) throw ConfigError("optimizer.learning_rate", "must be > 0");
  if (!(c.optimizer.momentum >= 0.0 && c.optimizer.momentum < 1.0)) {
    throw ConfigError("optimizer.momentum", "must lie in [0, 1)");
  }
  if (!(c.optimizer.weight_decay >= 0.0)) throw ConfigError("optimizer.weight_decay", "must be >= 0");
  check_plan(c.target_sampling, "target_sampling");
  check_plan(c.source_sampling, "source_sampling");
  const SyntheticSpec& s = c.dataset.synthetic;
  if (s.num_classes < 2) throw ConfigError("dataset.num_classes", "must be >= 2");
  if (s.samples_per_domain < s.num_classes) throw ConfigError("dataset.samples_per_domain", "must be >= num_classes");
  if (s.feature_dim < 1) throw ConfigError("dataset.feature_dim", "must be >= 1");
  if (!(s.train_ratio > 0.0 && s.train_ratio < 1.0)) throw ConfigError("dataset.train_ratio", "must lie in (0, 1)");
  if (!(s.shift.magnitude >= 0.0)) throw ConfigError("dataset.shift.magnitude", "must be >= 0");
  return c;
}

std::vector<std::pair<std::string, std::string>> flatten(const RunConfig& c) {
  std::vector<std::pair<std::string, std::string>> kv;
  const SyntheticSpec& s = c.dataset.synthetic;
  kv.emplace_back("dataset.path", c.dataset.path);
  kv.emplace_back("dataset.name", s.name);
  kv.emplace_back("dataset.num_classes", num(s.num_classes));
  kv.emplace_back("dataset.samples_per_domain", num(s.samples_per_domain));
  kv.emplace_back("dataset.feature_dim", num(s.feature_dim));
  kv.emplace_back("dataset.mode", s.mode == DataMode::kImage ? "image" : "vector");
  kv.emplace_back("dataset.shift.family", std::string(to_string(s.shift.family)));
  kv.emplace_back("dataset.shift.magnitude", num(s.shift.magnitude));
  kv.emplace_back("dataset.shift.seed", num(s.shift.seed));
  kv.emplace_back("dataset.seed", num(s.seed));
  kv.emplace_back("dataset.train_ratio", num(s.train_ratio));
  kv.emplace_back("dataset.class_spread", num(s.class_spread));
  kv.emplace_back("dataset.within_class_std", num(s.within_class_std));
  for (const auto& [key, plan] : {std::pair{"target_sampling", &c.target_sampling},
                                  std::pair{"source_sampling", &c.source_sampling}}) {
    kv.emplace_back(std::string(key) + ".strategy", std::string(to_string(plan->strategy)));
    kv.emplace_back(std::string(key) + ".fraction", num(plan->fraction));
    kv.emplace_back(std::string(key) + ".seed", num(plan->seed));
  }
  kv.emplace_back("method.name", c.method.name);
  kv.emplace_back("method.weight", num(c.method.weight));
  for (const auto& [k, v] : c.method.params) kv.emplace_back("method.params." + k, num(v));
  kv.emplace_back("arch.family", c.arch.family);
  kv.emplace_back("arch.depth", num(c.arch.depth));
  kv.emplace_back("arch.width", num(c.arch.width));
  kv.emplace_back("arch.feature_dim", num(c.arch.feature_dim));
  kv.emplace_back("pretrain", c.pretrain);
  kv.emplace_back("seed", num(c.seed));
  kv.emplace_back("iterations", num(c.iterations));
  kv.emplace_back("batch_size", num(c.batch_size));
  kv.emplace_back("optimizer.kind", std::string(to_string(c.optimizer.kind)));
  kv.emplace_back("optimizer.learning_rate", num(c.optimizer.learning_rate));
  kv.emplace_back("optimizer.momentum", num(c.optimizer.momentum));
  kv.emplace_back("optimizer.weight_decay", num(c.optimizer.weight_decay));
  kv.emplace_back("optimizer.schedule", std::string(to_string(c.optimizer.schedule)));
  kv.emplace_back("validate_every", num(c.validate_every));
  kv.emplace_back("early_stop", std::string(to_string(c.early_stop)));
  return kv;
}

std::string config_hash(const RunConfig& config) {
  // The seed is deliberately left out: records are keyed by (hash, seed).
  std::string text;
  for (const auto& [k, v] : flatten(resolve_run_config(config))) {
    if (k == "seed") continue;
    text += k;
    text += '=';
    text += v;
    text += '\n';
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
  return buf;
}

DatasetBundle load_dataset(const DatasetRef& ref) {
  if (!ref.path.empty()) return read_dataset(ref.path);
  return make_synthetic(ref.synthetic);
}

ArchSpec resolve_arch(const ArchSpec& arch, const InputSpec& input) {
  if (arch.width > 0) return arch;
  ArchSpec preset = default_preset(arch.family, input);
  preset.depth = arch.depth;
  preset.feature_dim = arch.feature_dim;
  if (preset.depth != default_preset(arch.family, input).depth) {
    // Re-fit the width for a non-default depth.
    ArchSpec probe = preset;
    std::size_t best_gap = std::numeric_limits<std::size_t>::max();
    for (int width = 4; width <= 256; width += 2) {
      probe.width = width;
      ModelAssembly m = build_backbone(probe, input, 0);
      const std::size_t count = m.backbone_parameter_count();
      const std::size_t gap = count > kPresetParameterBudget ? count - kPresetParameterBudget
                                                             : kPresetParameterBudget - count;
      if (gap < best_gap) {
        best_gap = gap;
        preset.width = width;
      }
      if (count > kPresetParameterBudget) break;
    }
  }
  return preset;
}

double evaluate(const ModelAssembly& model, const LabeledSet& split) {
  if (split.empty()) throw Error(ErrorCode::kEmptyInput, "cannot evaluate on an empty split");
  const Matrix probs = predict(model, split.features());
  const auto labels = split.labels(LabelReader::kEvaluation);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < probs.cols(); ++j) {
      if (probs(i, j) > probs(i, best)) best = j;
    }
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

double grl_lambda_schedule(double progress) {
  if (!(progress >= 0.0 && progress <= 1.0)) {
    throw Error(ErrorCode::kRange, "progress must lie in [0, 1], got " + std::to_string(progress));
  }
  return 2.0 / (1.0 + std::exp(-10.0 * progress)) - 1.0;
}

double scheduled_lr(const OptimizerSpec& spec, std::int64_t step, std::int64_t total) {
  if (spec.schedule == LrSchedule::kConstant || total <= 0) return spec.learning_rate;
  const double p = static_cast<double>(step) / static_cast<double>(total);
  return spec.learning_rate * 0.5 * (1.0 + std::cos(M_PI * p));
}

Optimizer::Optimizer(OptimizerSpec spec, std::vector<nn::Parameter*> params)
    : spec_(spec), params_(std::move(params)) {
  for (const nn::Parameter* p : params_) {
    first_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    if (spec_.kind == OptimizerKind::kAdam) second_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Optimizer::step(double learning_rate) {
  ++t_;
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    nn::Parameter& p = *params_[i];
    Matrix g = p.grad;
    if (spec_.weight_decay > 0.0) g += spec_.weight_decay * p.value;
    if (spec_.kind == OptimizerKind::kSgd) {
      first_[i] = spec_.momentum * first_[i] + g;
      p.value -= learning_rate * first_[i];
    } else {
      first_[i] = kBeta1 * first_[i] + (1.0 - kBeta1) * g;
      second_[i] = kBeta2 * second_[i] + (1.0 - kBeta2) * g.cwiseProduct(g);
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
      p.value.array() -= learning_rate * (first_[i].array() / c1) / ((second_[i].array() / c2).sqrt() + kEps);
    }
  }
}

CyclicSampler::CyclicSampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {
  if (n == 0) throw Error(ErrorCode::kEmptyInput, "cannot sample batches from an empty set");
  reshuffle();
}

void CyclicSampler::reshuffle() {
  ++epoch_;
  order_.resize(n_);
  for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
  Rng rng(derive_seed(seed_, "epoch", static_cast<std::uint64_t>(epoch_)));
  rng.shuffle(order_);
  pos_ = 0;
}

std::vector<std::size_t> CyclicSampler::next(std::size_t count) {
  std::vector<std::size_t> out;
  out.reserve(count);
  while (out.size() < count) {
    if (pos_ == n_) reshuffle();
    out.push_back(order_[pos_++]);
  }
  return out;
}

namespace {

Matrix gather(const Matrix& x, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

std::shared_ptr<const Augmenter> augmenter_for(const LabeledSet& set) {
  return make_augmenter(data_mode_name(set), set);
}

struct Accumulator {
  double total = 0.0, ce = 0.0, adaptation = 0.0;
  std::map<std::string, double> diagnostics;
  std::int64_t n = 0;

  void add(const LossBundle& b) {
    total += b.total;
    ce += b.ce_source;
    adaptation += b.adaptation;
    for (const auto& [k, v] : b.diagnostics) diagnostics[k] += v;
    ++n;
  }
  void flush(ValidationEntry& e) {
    const double d = n > 0 ? static_cast<double>(n) : 1.0;
    e.total = total / d;
    e.ce_source = ce / d;
    e.adaptation = adaptation / d;
    for (const auto& [k, v] : diagnostics) e.diagnostics[k] = v / d;
    *this = Accumulator{};
  }
};

MetricsRecord metrics_from(double source_acc, double target_acc) {
  MetricsRecord m;
  m.lambda_s = 100.0 * source_acc;
  m.lambda_t = 100.0 * target_acc;
  m.abs_drop = m.lambda_s - m.lambda_t;
  m.sigma_st = m.lambda_s > 0.0 ? relative_drop(m.lambda_s, m.lambda_t).sigma_st
                                 : std::numeric_limits<double>::quiet_NaN();
  return m;
}

}  // namespace

RunRecord train_run(const RunConfig& raw_config, const TrainOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  const RunConfig config = resolve_run_config(raw_config);

  DatasetBundle owned;
  if (options.dataset == nullptr) owned = load_dataset(config.dataset);
  const DatasetBundle& data = options.dataset != nullptr ? *options.dataset : owned;
  data.validate();

  SamplingPlan target_plan = config.target_sampling;
  target_plan.seed = derive_seed(config.seed, "target-sampling", config.target_sampling.seed);
  SamplingPlan source_plan = config.source_sampling;
  source_plan.seed = derive_seed(config.seed, "source-sampling", config.source_sampling.seed);
  const LabeledSet target_train = apply_sampling(data.target_train, target_plan);
  LabeledSet source_train = apply_sampling(data.source_train, source_plan);
  LabeledSet source_val;
  if (config.early_stop == EarlyStop::kSourceValidation) {
    auto [train, val] = make_train_test_split(source_train, 1.0 - kSourceValidationShare,
                                              derive_seed(config.seed, "source-validation"));
    source_train = std::move(train);
    source_val = std::move(val);
  }

  const InputSpec input = input_spec_of(data);
  const ArchSpec arch = resolve_arch(config.arch, input);
  ModelAssembly model = build_backbone(arch, input, config.seed);

  std::string pretrain_digest;
  if (options.pretrained != nullptr || !config.pretrain.empty()) {
    const Checkpoint ckpt = options.pretrained != nullptr ? *options.pretrained : load_checkpoint(config.pretrain);
    if (!(ckpt.arch == arch) || ckpt.input.dim != input.dim) {
      throw ConfigError("pretrain", "checkpoint architecture does not match the run's backbone");
    }
    for (const auto& [name, value] : ckpt.params) {
      if (name.rfind("backbone.", 0) != 0) {
        throw ConfigError("pretrain", "checkpoint holds non-backbone parameter '" + name + "'");
      }
    }
    load_into(model, ckpt);
    pretrain_digest = parameter_digest(model.backbone_parameters());
  }

  MethodContext method_ctx;
  method_ctx.data_mode = data_mode_name(source_train);
  method_ctx.augmenter = augmenter_for(source_train);
  method_ctx.seed = derive_seed(config.seed, "method");
  std::unique_ptr<Method> method = make_method(config.method, method_ctx);
  method->prepare(model);

  std::vector<nn::Parameter*> params = model.parameters();
  Optimizer optimizer(config.optimizer, params);

  const auto source_labels_span = source_train.labels(LabelReader::kSourceTraining);
  const std::vector<int> source_labels(source_labels_span.begin(), source_labels_span.end());
  CyclicSampler source_batches(source_train.size(), derive_seed(config.seed, "source-batches"));
  CyclicSampler target_batches(target_train.size(), derive_seed(config.seed, "target-batches"));
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);

  RunRecord record;
  record.seed = config.seed;
  record.config_hash = config_hash(config);
  for (const auto& [k, v] : flatten(config)) record.manifest[k] = v;
  record.manifest["resolved.arch.width"] = std::to_string(arch.width);
  record.manifest["resolved.arch.depth"] = std::to_string(arch.depth);
  record.manifest["resolved.backbone_parameters"] = std::to_string(model.backbone_parameter_count());
  record.manifest["resolved.source_train_size"] = std::to_string(source_train.size());
  record.manifest["resolved.target_train_size"] = std::to_string(target_train.size());
  record.manifest["resolved.data_mode"] = method_ctx.data_mode;
  if (!pretrain_digest.empty()) record.manifest["resolved.pretrain_digest"] = pretrain_digest;

  Accumulator acc;
  auto validate = [&](std::int64_t step) {
    ValidationEntry e;
    e.step = step;
    e.source_acc = evaluate(model, data.source_test);
    e.target_acc = evaluate(model, data.target_test);
    acc.flush(e);
    if (!source_val.empty()) e.diagnostics["source_validation_acc"] = evaluate(model, source_val);
    record.log.push_back(std::move(e));
  };

  const std::int64_t total_steps = config.iterations;
  for (std::int64_t step = 0; step < total_steps; ++step) {
    SourceBatch src;
    const std::vector<std::size_t> s_rows = source_batches.next(batch);
    src.features = gather(source_train.features(), s_rows);
    src.labels.reserve(batch);
    for (const std::size_t r : s_rows) src.labels.push_back(source_labels[r]);
    const Matrix tgt = gather(target_train.features(), target_batches.next(batch));

    StepContext ctx;
    ctx.step = step;
    ctx.progress = static_cast<double>(step) / static_cast<double>(total_steps);
    ctx.grl_coeff = grl_lambda_schedule(ctx.progress);

    nn::zero_grad(params);
    const LossBundle loss = method->step(model, src, tgt, ctx);
    if (!loss.finite()) throw AbortedRun(step, "non-finite loss (total=" + std::to_string(loss.total) + ")");
    optimizer.step(scheduled_lr(config.optimizer, step, total_steps));
    acc.add(loss);

    const std::int64_t done = step + 1;
    if (done == total_steps || (config.validate_every > 0 && done % config.validate_every == 0)) validate(done);
  }
  if (total_steps == 0) validate(0);

  const ValidationEntry* chosen = &record.log.back();
  if (config.early_stop == EarlyStop::kTargetTest) {
    for (const ValidationEntry& e : record.log) {
      if (e.target_acc > chosen->target_acc || (e.target_acc == chosen->target_acc && e.step < chosen->step)) {
        chosen = &e;
      }
    }
  } else if (config.early_stop == EarlyStop::kSourceValidation) {
    auto score = [](const ValidationEntry& e) { return e.diagnostics.at("source_validation_acc"); };
    for (const ValidationEntry& e : record.log) {
      if (score(e) > score(*chosen) || (score(e) == score(*chosen) && e.step < chosen->step)) chosen = &e;
    }
  }
  record.metrics = metrics_from(chosen->source_acc, chosen->target_acc);
  record.manifest["resolved.reported_step"] = std::to_string(chosen->step);

  record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (!options.run_dir.empty()) {
    write_run_artifacts(options.run_dir, record);
    save_checkpoint(options.run_dir / "checkpoint", make_checkpoint(model, total_steps));
  }
  if (options.model_out != nullptr) *options.model_out = std::move(model);
  return record;
}

}  // namespace udab

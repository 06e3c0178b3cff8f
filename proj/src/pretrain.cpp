#include "udab/pretrain.hpp"

#include <algorithm>
#include <cmath>

#include "udab/augment.hpp"
#include "udab/error.hpp"
#include "udab/io.hpp"
#include "udab/losses.hpp"
#include "udab/rng.hpp"

namespace udab {

std::string_view to_string(PretextMode mode) {
  return mode == PretextMode::kSupervised ? "supervised" : "contrastive";
}

PretextMode parse_pretext_mode(std::string_view name) {
  if (name == "supervised") return PretextMode::kSupervised;
  if (name == "contrastive") return PretextMode::kContrastive;
  throw ConfigError("pretrain.mode", "expected supervised or contrastive, got '" + std::string(name) + "'");
}

LabeledSet build_pretext_subset(const LabeledSet& set, int budget, const std::set<int>& exclude_classes,
                                std::uint64_t seed, PretextManifest* manifest) {
  if (budget < 1) throw Error(ErrorCode::kPrecondition, "pretext budget must be at least 1");
  const auto labels = set.labels(LabelReader::kSampler);
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (exclude_classes.count(labels[i]) == 0) by_class[labels[i]].push_back(i);
  }
  if (by_class.empty()) throw Error(ErrorCode::kEmptyPretext, "every pretext class is excluded");
  const std::size_t kept_classes = by_class.size();
  if (static_cast<std::size_t>(budget) < kept_classes) {
    throw Error(ErrorCode::kPrecondition, "pretext budget " + std::to_string(budget) + " is below the " +
                                              std::to_string(kept_classes) + " retained classes");
  }
  const std::size_t quota = static_cast<std::size_t>(budget) / kept_classes;

  PretextManifest m;
  m.budget = budget;
  m.excluded = exclude_classes;
  std::vector<std::size_t> rows;
  for (const auto& [cls, members] : by_class) {
    const std::size_t take = std::min(quota, members.size());
    Rng rng(derive_seed(seed, "pretext-class", static_cast<std::uint64_t>(cls)));
    for (const std::size_t k : rng.sample_without_replacement(members.size(), take)) rows.push_back(members[k]);
    m.retained.push_back(cls);
    m.per_class[cls] = take;
  }
  std::sort(rows.begin(), rows.end());
  m.actual_size = rows.size();
  if (manifest != nullptr) *manifest = m;
  return set.select(rows);
}

LabeledSet pretext_corpus(const PretextSpec& spec) {
  const DatasetBundle bundle = load_dataset(spec.corpus);
  const Matrix& a = bundle.source_train.features();
  const Matrix& b = bundle.target_train.features();
  Matrix x(a.rows() + b.rows(), a.cols());
  x << a, b;
  const auto la = bundle.source_train.labels(LabelReader::kSampler);
  const auto lb = bundle.target_train.labels(LabelReader::kSampler);
  std::vector<int> y(la.begin(), la.end());
  y.insert(y.end(), lb.begin(), lb.end());
  return LabeledSet(std::move(x), std::move(y), Domain::kSource, bundle.source_train.image_shape());
}

namespace {

void check_spec(const PretextSpec& spec) {
  if (spec.epochs < 0) throw ConfigError("pretrain.epochs", "must be >= 0");
  if (spec.batch_size < 1) throw ConfigError("pretrain.batch_size", "must be >= 1");
  if (!(spec.learning_rate > 0.0)) throw ConfigError("pretrain.learning_rate", "must be > 0");
}

int corpus_classes(const LabeledSet& subset, const PretextSpec& spec) {
  int c = spec.corpus.path.empty() ? spec.corpus.synthetic.num_classes : 0;
  const auto labels = subset.labels(LabelReader::kPretext);
  for (const int y : labels) c = std::max(c, y + 1);
  return std::max(c, 2);
}

Matrix gather(const Matrix& x, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

OptimizerSpec pretext_optimizer(const PretextSpec& spec) {
  OptimizerSpec o;
  o.kind = OptimizerKind::kSgd;
  o.learning_rate = spec.learning_rate;
  o.momentum = 0.9;
  o.schedule = LrSchedule::kCosine;
  return o;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, "pretext-epoch", static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order);
  return order;
}

PretrainResult finish(ModelAssembly& model, std::int64_t steps, PretrainResult result) {
  result.checkpoint = make_checkpoint(model, steps, "backbone.");
  return result;
}

}  // namespace

PretrainResult supervised_pretrain(const LabeledSet& subset, const PretextSpec& spec, const ArchSpec& arch) {
  check_spec(spec);
  if (subset.empty()) throw Error(ErrorCode::kEmptyPretext, "pretext set is empty");
  const InputSpec input{subset.dim(), subset.image_shape(), corpus_classes(subset, spec)};
  ModelAssembly model = build_backbone(resolve_arch(arch, input), input, spec.seed);
  std::vector<nn::Parameter*> params = model.parameters();
  const OptimizerSpec ospec = pretext_optimizer(spec);
  Optimizer optimizer(ospec, params);

  const auto label_span = subset.labels(LabelReader::kPretext);
  const std::vector<int> labels(label_span.begin(), label_span.end());
  const std::size_t n = subset.size();
  const std::size_t batch = std::min(n, static_cast<std::size_t>(spec.batch_size));
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>((n + batch - 1) / batch);
  const std::int64_t total = steps_per_epoch * spec.epochs;

  PretrainResult result;
  result.manifest.mode = "supervised";
  std::int64_t step = 0;
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    const auto order = epoch_order(n, spec.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(batch, n - start));
      std::vector<int> y;
      for (const std::size_t r : rows) y.push_back(labels[r]);
      nn::zero_grad(params);
      const LossBundle loss = source_only_loss(model, SourceBatch{gather(subset.features(), rows), y});
      if (!loss.finite()) throw AbortedRun(step, "non-finite pretext loss");
      optimizer.step(scheduled_lr(ospec, step, total));
      loss_sum += loss.total;
      ++step;
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(steps_per_epoch));
  }
  result.train_accuracy = evaluate(model, subset);
  return finish(model, step, std::move(result));
}

PretrainResult contrastive_pretrain(const LabeledSet& subset, const PretextSpec& spec, const ArchSpec& arch) {
  check_spec(spec);
  if (!(spec.temperature > 0.0)) throw Error(ErrorCode::kPrecondition, "contrastive temperature must be positive");
  if (spec.batch_size < 4) {
    throw Error(ErrorCode::kTooSmallBatch, "contrastive batches need at least 4 samples, got " +
                                               std::to_string(spec.batch_size));
  }
  if (subset.empty()) throw Error(ErrorCode::kEmptyPretext, "pretext set is empty");
  if (subset.size() < 4) throw Error(ErrorCode::kTooSmallBatch, "contrastive pretext needs at least 4 samples");

  const InputSpec input{subset.dim(), subset.image_shape(), 2};
  ModelAssembly model = build_backbone(resolve_arch(arch, input), input, spec.seed);
  const int fd = model.feature_dim();
  nn::Sequential projection;
  if (spec.projection_head) {
    Rng rng(derive_seed(spec.seed, "projection-head"));
    projection.add(std::make_unique<nn::Linear>(fd, fd, rng, "projection.fc0"));
    projection.add(std::make_unique<nn::Relu>(fd));
    projection.add(std::make_unique<nn::Linear>(fd, fd, rng, "projection.fc1"));
  }
  std::vector<nn::Parameter*> params = model.backbone_parameters();
  projection.collect(params);
  const OptimizerSpec ospec = pretext_optimizer(spec);
  Optimizer optimizer(ospec, params);
  const auto augmenter = make_augmenter(data_mode_name(subset), subset);
  Rng view_rng(derive_seed(spec.seed, "contrastive-views"));

  const std::size_t n = subset.size();
  const std::size_t batch = std::min(n, static_cast<std::size_t>(spec.batch_size));
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>(n / batch);
  const std::int64_t total = steps_per_epoch * spec.epochs;

  PretrainResult result;
  result.manifest.mode = "contrastive";
  std::int64_t step = 0;
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    const auto order = epoch_order(n, spec.seed, epoch);
    double loss_sum = 0.0;
    // Partial trailing batches are dropped so every batch has enough negatives.
    for (std::int64_t b = 0; b < steps_per_epoch; ++b) {
      const std::span<const std::size_t> rows(order.data() + static_cast<std::size_t>(b) * batch, batch);
      const Matrix x = gather(subset.features(), rows);
      Matrix views(2 * x.rows(), x.cols());
      views << augmenter->strong(x, view_rng), augmenter->strong(x, view_rng);

      nn::zero_grad(params);
      nn::Cache bb, proj;
      const Matrix z = model.backbone->forward(views, &bb);
      const Matrix e = spec.projection_head ? projection.forward(z, &proj) : z;
      const ValueGrad loss = nt_xent(e, spec.temperature);
      if (!std::isfinite(loss.value)) throw AbortedRun(step, "non-finite contrastive loss");
      const Matrix gz = spec.projection_head ? projection.backward(loss.grad, proj) : loss.grad;
      model.backbone->backward(gz, bb);
      optimizer.step(scheduled_lr(ospec, step, total));
      loss_sum += loss.value;
      ++step;
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(std::max<std::int64_t>(1, steps_per_epoch)));
  }
  return finish(model, step, std::move(result));
}

PretrainResult supervised_pretrain(const PretextSpec& spec, const ArchSpec& arch) {
  if (spec.mode != PretextMode::kSupervised) throw Error(ErrorCode::kPrecondition, "pretext mode is not supervised");
  PretextManifest manifest;
  const LabeledSet subset = build_pretext_subset(pretext_corpus(spec), spec.budget, spec.exclude_classes,
                                                 derive_seed(spec.seed, "pretext-subset"), &manifest);
  PretrainResult r = supervised_pretrain(subset, spec, arch);
  manifest.mode = r.manifest.mode;
  r.manifest = manifest;
  return r;
}

PretrainResult contrastive_pretrain(const PretextSpec& spec, const ArchSpec& arch) {
  if (spec.mode != PretextMode::kContrastive) throw Error(ErrorCode::kPrecondition, "pretext mode is not contrastive");
  PretextManifest manifest;
  const LabeledSet subset = build_pretext_subset(pretext_corpus(spec), spec.budget, spec.exclude_classes,
                                                 derive_seed(spec.seed, "pretext-subset"), &manifest);
  PretrainResult r = contrastive_pretrain(subset, spec, arch);
  manifest.mode = r.manifest.mode;
  r.manifest = manifest;
  return r;
}

PretrainResult run_pretrain(const PretextSpec& spec, const ArchSpec& arch) {
  return spec.mode == PretextMode::kSupervised ? supervised_pretrain(spec, arch) : contrastive_pretrain(spec, arch);
}

void save_pretrain(const std::filesystem::path& dir, const PretrainResult& result) {
  save_checkpoint(dir, result.checkpoint);
  KeyValues kv;
  const PretextManifest& m = result.manifest;
  kv["budget"] = std::to_string(m.budget);
  kv["actual_size"] = std::to_string(m.actual_size);
  kv["mode"] = m.mode;
  std::string excluded, retained;
  for (const int c : m.excluded) excluded += (excluded.empty() ? "" : ",") + std::to_string(c);
  for (const int c : m.retained) retained += (retained.empty() ? "" : ",") + std::to_string(c);
  kv["exclude_classes"] = excluded;
  kv["retained_classes"] = retained;
  for (const auto& [c, k] : m.per_class) kv["class." + std::to_string(c)] = std::to_string(k);
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", result.epoch_loss[e]);
    kv["epoch_loss." + std::to_string(e)] = buf;
  }
  write_key_values(dir / "pretext", kv);
}

}  // namespace udab

#include "udab/methods.hpp"

#include <cmath>

#include "udab/error.hpp"

namespace udab {

bool LossBundle::finite() const {
  if (!std::isfinite(total) || !std::isfinite(ce_source) || !std::isfinite(adaptation)) return false;
  for (const auto& [k, v] : diagnostics) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

namespace {

struct Pass {
  nn::Cache backbone;
  nn::Cache head;
  Matrix features;
  Matrix logits;
};

Pass run(ModelAssembly& model, const Matrix& x, bool keep_cache = true) {
  Pass p;
  p.features = model.backbone->forward(x, keep_cache ? &p.backbone : nullptr);
  p.logits = model.classifier->forward(p.features, keep_cache ? &p.head : nullptr);
  return p;
}

void check_batches(const SourceBatch& source, const Matrix* target) {
  if (source.features.rows() == 0) throw Error(ErrorCode::kEmptyBatch, "empty source batch");
  if (static_cast<std::size_t>(source.features.rows()) != source.labels.size()) {
    throw Error(ErrorCode::kShape, "source features and labels disagree");
  }
  if (target != nullptr && target->rows() == 0) throw Error(ErrorCode::kEmptyBatch, "empty target batch");
}

std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < m.cols(); ++j) {
      if (m(i, j) > m(i, best)) best = j;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

std::vector<int> domain_ids(Eigen::Index n_source, Eigen::Index n_target) {
  std::vector<int> d(static_cast<std::size_t>(n_source + n_target), 0);
  std::fill(d.begin() + n_source, d.end(), 1);
  return d;
}

Matrix stack(const Matrix& top, const Matrix& bottom) {
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

/// Source cross-entropy path; returns d(ce)/d(source features).
Matrix source_backward(ModelAssembly& model, Pass& s, const ValueGrad& ce) {
  return model.classifier->backward(ce.grad, s.head);
}

LossBundle finish(double ce, double adaptation, double weight) {
  LossBundle b;
  b.ce_source = ce;
  b.adaptation = adaptation;
  b.total = ce + weight * adaptation;
  return b;
}

}  // namespace

LossBundle source_only_loss(ModelAssembly& model, const SourceBatch& source) {
  check_batches(source, nullptr);
  Pass s = run(model, source.features);
  const ValueGrad ce = cross_entropy(s.logits, source.labels);
  model.backbone->backward(source_backward(model, s, ce), s.backbone);
  return finish(ce.value, 0.0, 0.0);
}

LossBundle dann_loss(ModelAssembly& model, const SourceBatch& source, const Matrix& target, double grl_coeff,
                     double weight) {
  check_batches(source, &target);
  if (!model.discriminator) throw ConfigError("method", "dann needs a domain discriminator");
  Pass s = run(model, source.features);
  nn::Cache t_cache;
  const Matrix t_features = model.backbone->forward(target, &t_cache);
  const ValueGrad ce = cross_entropy(s.logits, source.labels);

  const Eigen::Index ns = s.features.rows();
  const Eigen::Index nt = t_features.rows();
  nn::Cache disc_cache;
  const Matrix disc_in = grad_reverse(stack(s.features, t_features), grl_coeff);
  const Matrix disc_logits = model.discriminator->forward(disc_in, &disc_cache);
  const DomainBce bce = domain_bce(disc_logits, domain_ids(ns, nt));

  const Matrix g_in = model.discriminator->backward(weight * bce.grad, disc_cache);
  const Matrix g_adv = grad_reverse_backward(g_in, grl_coeff);
  Matrix gz_s = source_backward(model, s, ce);
  gz_s += g_adv.topRows(ns);
  model.backbone->backward(gz_s, s.backbone);
  model.backbone->backward(g_adv.bottomRows(nt), t_cache);

  LossBundle b = finish(ce.value, bce.value, weight);
  b.diagnostics["discriminator_accuracy"] = bce.accuracy;
  return b;
}

LossBundle cdan_loss(ModelAssembly& model, const SourceBatch& source, const Matrix& target, double grl_coeff,
                     bool entropy_conditioning, const Multilinear& multilinear, double weight) {
  check_batches(source, &target);
  if (!model.discriminator) throw ConfigError("method", "cdan needs a domain discriminator");
  Pass s = run(model, source.features);
  Pass t = run(model, target);
  const ValueGrad ce = cross_entropy(s.logits, source.labels);

  const Eigen::Index ns = s.features.rows();
  const Eigen::Index nt = t.features.rows();
  const Matrix features = stack(s.features, t.features);
  const Matrix probs = stack(softmax(s.logits), softmax(t.logits));
  const Matrix joint = grad_reverse(multilinear.forward(features, probs), grl_coeff);
  nn::Cache disc_cache;
  const Matrix disc_logits = model.discriminator->forward(joint, &disc_cache);
  std::vector<double> weights;
  if (entropy_conditioning) weights = entropy_weights(probs);
  const DomainBce bce = domain_bce(disc_logits, domain_ids(ns, nt), weights);

  const Matrix g_joint = grad_reverse_backward(model.discriminator->backward(weight * bce.grad, disc_cache), grl_coeff);
  const Matrix g_features = multilinear.backward_features(features, probs, g_joint);
  Matrix gz_s = source_backward(model, s, ce);
  gz_s += g_features.topRows(ns);
  model.backbone->backward(gz_s, s.backbone);
  model.backbone->backward(g_features.bottomRows(nt), t.backbone);

  LossBundle b = finish(ce.value, bce.value, weight);
  b.diagnostics["discriminator_accuracy"] = bce.accuracy;
  return b;
}

LossBundle mcc_method_loss(ModelAssembly& model, const SourceBatch& source, const Matrix& target, double temperature,
                           double weight) {
  check_batches(source, &target);
  Pass s = run(model, source.features);
  Pass t = run(model, target);
  const ValueGrad ce = cross_entropy(s.logits, source.labels);
  const ValueGrad mcc = mcc_loss_grad(t.logits, temperature);

  model.backbone->backward(source_backward(model, s, ce), s.backbone);
  const Matrix gz_t = model.classifier->backward(weight * mcc.grad, t.head);
  model.backbone->backward(gz_t, t.backbone);
  return finish(ce.value, mcc.value, weight);
}

LossBundle mdd_loss(ModelAssembly& model, const SourceBatch& source, const Matrix& target, double margin,
                    double grl_coeff, double weight) {
  if (!model.aux_head) throw ConfigError("method", "mdd needs the auxiliary head");
  if (!(margin > 0.0)) throw Error(ErrorCode::kPrecondition, "mdd margin must be positive");
  check_batches(source, &target);
  Pass s = run(model, source.features);
  Pass t = run(model, target);
  const ValueGrad ce = cross_entropy(s.logits, source.labels);
  const std::vector<int> pseudo_s = argmax_rows(s.logits);
  const std::vector<int> pseudo_t = argmax_rows(t.logits);

  nn::Cache aux_s_cache, aux_t_cache;
  const Matrix aux_s = model.aux_head->forward(grad_reverse(s.features, grl_coeff), &aux_s_cache);
  const Matrix aux_t = model.aux_head->forward(grad_reverse(t.features, grl_coeff), &aux_t_cache);
  const ValueGrad src_term = cross_entropy(aux_s, pseudo_s);
  const ValueGrad tgt_term = mdd_target_disparity(aux_t, pseudo_t);

  const Matrix g_aux_s =
      grad_reverse_backward(model.aux_head->backward(weight * margin * src_term.grad, aux_s_cache), grl_coeff);
  const Matrix g_aux_t = grad_reverse_backward(model.aux_head->backward(weight * tgt_term.grad, aux_t_cache), grl_coeff);
  Matrix gz_s = source_backward(model, s, ce);
  gz_s += g_aux_s;
  model.backbone->backward(gz_s, s.backbone);
  model.backbone->backward(g_aux_t, t.backbone);

  LossBundle b = finish(ce.value, margin * src_term.value + tgt_term.value, weight);
  b.diagnostics["source_disparity"] = src_term.value;
  b.diagnostics["target_disparity"] = tgt_term.value;
  return b;
}

MarginalTracker::MarginalTracker(int num_classes)
    : source(RowVector::Constant(num_classes, 1.0 / num_classes)),
      target(RowVector::Constant(num_classes, 1.0 / num_classes)) {}

void MarginalTracker::update(const RowVector& source_batch, const RowVector& target_batch) {
  source = decay * source + (1.0 - decay) * source_batch;
  target = decay * target + (1.0 - decay) * target_batch;
}

PseudoLabels adamatch_pseudo_labels(const Matrix& source_weak_probs, const Matrix& target_weak_probs,
                                    const MarginalTracker& marginals, double confidence_ratio) {
  if (!(confidence_ratio >= 0.0 && confidence_ratio <= 1.0)) {
    throw Error(ErrorCode::kPrecondition, "confidence ratio must lie in [0, 1]");
  }
  PseudoLabels out;
  out.threshold = confidence_ratio * source_weak_probs.rowwise().maxCoeff().mean();
  const Matrix aligned = align_distribution(target_weak_probs, marginals.source, marginals.target);
  out.labels = argmax_rows(aligned);
  std::size_t kept = 0;
  for (Eigen::Index i = 0; i < aligned.rows(); ++i) {
    const bool pass = aligned.row(i).maxCoeff() >= out.threshold;
    out.mask.push_back(pass);
    kept += pass ? 1 : 0;
  }
  out.mask_rate = aligned.rows() > 0 ? static_cast<double>(kept) / static_cast<double>(aligned.rows()) : 0.0;
  return out;
}

LossBundle adamatch_loss(ModelAssembly& model, const SourceBatch& source, const Matrix& target,
                         const Augmenter& augmenter, Rng& rng, MarginalTracker& marginals, double confidence_ratio,
                         double progress, double weight) {
  check_batches(source, &target);
  Pass s = run(model, source.features);
  const Pass t_weak = run(model, target, false);
  Pass t_strong = run(model, augmenter.strong(target, rng));
  const ValueGrad ce = cross_entropy(s.logits, source.labels);

  const Matrix source_probs = softmax(s.logits);
  const Matrix target_probs = softmax(t_weak.logits);
  RowVector label_marginal = RowVector::Zero(model.input.num_classes);
  for (const int y : source.labels) label_marginal(y) += 1.0;
  label_marginal /= static_cast<double>(source.labels.size());
  marginals.update(label_marginal, target_probs.colwise().mean());
  const PseudoLabels pl = adamatch_pseudo_labels(source_probs, target_probs, marginals, confidence_ratio);

  // Masked mean over the whole target batch.
  const Eigen::Index nt = target.rows();
  const Matrix strong_probs = softmax(t_strong.logits);
  Matrix g_strong = Matrix::Zero(nt, strong_probs.cols());
  double masked_ce = 0.0;
  for (Eigen::Index i = 0; i < nt; ++i) {
    if (!pl.mask[static_cast<std::size_t>(i)]) continue;
    const int y = pl.labels[static_cast<std::size_t>(i)];
    if (strong_probs(i, y) < kProbEpsilon) {
      masked_ce += -std::log(kProbEpsilon);
      continue;
    }
    masked_ce += -std::log(strong_probs(i, y));
    g_strong.row(i) = strong_probs.row(i);
    g_strong(i, y) -= 1.0;
  }
  masked_ce /= static_cast<double>(nt);
  g_strong /= static_cast<double>(nt);
  const double mu = adamatch_warmup(progress);

  model.backbone->backward(source_backward(model, s, ce), s.backbone);
  const Matrix gz_t = model.classifier->backward((weight * mu) * g_strong, t_strong.head);
  model.backbone->backward(gz_t, t_strong.backbone);

  LossBundle b = finish(ce.value, mu * masked_ce, weight);
  b.diagnostics["mask_rate"] = pl.mask_rate;
  b.diagnostics["threshold"] = pl.threshold;
  return b;
}

namespace {

class SourceOnly final : public Method {
 public:
  using Method::Method;
  LossBundle step(ModelAssembly& model, const SourceBatch& source, const Matrix&, const StepContext&) override {
    return source_only_loss(model, source);
  }
};

class Dann final : public Method {
 public:
  using Method::Method;
  void prepare(ModelAssembly& model) override { model.add_discriminator(model.feature_dim()); }
  LossBundle step(ModelAssembly& model, const SourceBatch& source, const Matrix& target,
                  const StepContext& ctx) override {
    return dann_loss(model, source, target, ctx.grl_coeff, config().weight);
  }
};

class Cdan final : public Method {
 public:
  using Method::Method;
  void prepare(ModelAssembly& model) override {
    multilinear_ = std::make_unique<Multilinear>(model.feature_dim(), model.input.num_classes,
                                                 static_cast<int>(param("multilinear_cap")), model.seed);
    model.add_discriminator(multilinear_->out_dim());
  }
  LossBundle step(ModelAssembly& model, const SourceBatch& source, const Matrix& target,
                  const StepContext& ctx) override {
    if (!multilinear_) prepare(model);
    return cdan_loss(model, source, target, ctx.grl_coeff, param("entropy_conditioning") != 0.0, *multilinear_,
                     config().weight);
  }

 private:
  std::unique_ptr<Multilinear> multilinear_;
};

class Mcc final : public Method {
 public:
  using Method::Method;
  LossBundle step(ModelAssembly& model, const SourceBatch& source, const Matrix& target,
                  const StepContext&) override {
    return mcc_method_loss(model, source, target, param("temperature"), config().weight);
  }
};

class Mdd final : public Method {
 public:
  using Method::Method;
  void prepare(ModelAssembly& model) override { model.add_aux_head(); }
  LossBundle step(ModelAssembly& model, const SourceBatch& source, const Matrix& target,
                  const StepContext& ctx) override {
    return mdd_loss(model, source, target, param("margin"), param("grl_scale") * ctx.grl_coeff, config().weight);
  }
};

class AdaMatch final : public Method {
 public:
  AdaMatch(MethodConfig config, const MethodContext& ctx)
      : Method(std::move(config)), augmenter_(ctx.augmenter), rng_(derive_seed(ctx.seed, "adamatch-augment")) {
    if (!augmenter_) throw ConfigError("method", "adamatch has no augmenters for data mode '" + ctx.data_mode + "'");
  }
  void prepare(ModelAssembly& model) override { marginals_.emplace(model.input.num_classes); }
  LossBundle step(ModelAssembly& model, const SourceBatch& source, const Matrix& target,
                  const StepContext& ctx) override {
    if (!marginals_) prepare(model);
    return adamatch_loss(model, source, target, *augmenter_, rng_, *marginals_, param("confidence_ratio"),
                         ctx.progress, config().weight);
  }

 private:
  std::shared_ptr<const Augmenter> augmenter_;
  Rng rng_;
  std::optional<MarginalTracker> marginals_;
};

template <typename T>
MethodFactory simple_factory() {
  return [](const MethodConfig& c, const MethodContext&) -> std::unique_ptr<Method> { return std::make_unique<T>(c); };
}

}  // namespace

MethodRegistry::MethodRegistry() {
  entries_["source-only"] = {simple_factory<SourceOnly>(), {}};
  entries_["dann"] = {simple_factory<Dann>(), {}};
  entries_["cdan"] = {simple_factory<Cdan>(),
                      {{"multilinear_cap", kDefaultMultilinearCap}, {"entropy_conditioning", 0.0}}};
  entries_["mcc"] = {simple_factory<Mcc>(), {{"temperature", kDefaultMccTemperature}}};
  entries_["mdd"] = {simple_factory<Mdd>(), {{"margin", kDefaultMddMargin}, {"grl_scale", kDefaultMddGrlScale}}};
  entries_["adamatch"] = {[](const MethodConfig& c, const MethodContext& ctx) -> std::unique_ptr<Method> {
                            return std::make_unique<AdaMatch>(c, ctx);
                          },
                          {{"confidence_ratio", kDefaultConfidenceRatio}}};
}

MethodRegistry& MethodRegistry::instance() {
  static MethodRegistry registry;
  return registry;
}

void MethodRegistry::add(const std::string& name, MethodEntry entry) { entries_[name] = std::move(entry); }

bool MethodRegistry::contains(const std::string& name) const { return entries_.count(name) > 0; }

const MethodEntry& MethodRegistry::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error(ErrorCode::kUnknownMethod, "no adaptation method named '" + name + "'");
  return it->second;
}

std::vector<std::string> MethodRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_) out.push_back(name);
  return out;
}

MethodConfig resolve_method_config(const MethodConfig& config) {
  const MethodEntry& entry = MethodRegistry::instance().get(config.name);
  if (!(config.weight >= 0.0) || !std::isfinite(config.weight)) {
    throw ConfigError("method.weight", "adaptation weight must be a finite value >= 0");
  }
  MethodConfig out = config;
  for (const auto& [key, value] : config.params) {
    if (entry.defaults.count(key) == 0) {
      throw ConfigError("method.params." + key, "unknown parameter for method '" + config.name + "'");
    }
    if (!std::isfinite(value)) throw ConfigError("method.params." + key, "must be finite");
  }
  for (const auto& [key, value] : entry.defaults) out.params.try_emplace(key, value);

  auto require = [&](const char* key, bool ok, const char* what) {
    if (out.params.count(key) != 0 && !ok) throw ConfigError(std::string("method.params.") + key, what);
  };
  auto get = [&](const char* key) { return out.params.count(key) ? out.params.at(key) : 0.0; };
  require("temperature", get("temperature") > 0.0, "must be > 0");
  require("margin", get("margin") > 0.0, "must be > 0");
  require("grl_scale", get("grl_scale") >= 0.0, "must be >= 0");
  require("confidence_ratio", get("confidence_ratio") >= 0.0 && get("confidence_ratio") <= 1.0, "must lie in [0, 1]");
  require("multilinear_cap", get("multilinear_cap") >= 1.0, "must be >= 1");
  return out;
}

std::unique_ptr<Method> make_method(const MethodConfig& config, const MethodContext& context) {
  const MethodConfig resolved = resolve_method_config(config);
  return MethodRegistry::instance().get(resolved.name).factory(resolved, context);
}

}  // namespace udab

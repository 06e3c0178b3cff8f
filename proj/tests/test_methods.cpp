#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "udab/augment.hpp"
#include "udab/error.hpp"
#include "udab/losses.hpp"
#include "udab/methods.hpp"
#include "udab/zoo.hpp"

namespace udab {
namespace {

const double kLn2 = std::numbers::ln2;

Matrix rows(std::initializer_list<std::initializer_list<double>> values) {
  Matrix m(static_cast<Eigen::Index>(values.size()), static_cast<Eigen::Index>(values.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : values) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

Matrix random_batch(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  Matrix x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = rng.normal();
  return x;
}

/// Zeroes the output layer of a head so it emits logit 0 everywhere.
void zero_output_layer(nn::Module& head, const std::string& layer) {
  std::vector<nn::Parameter*> params;
  head.collect(params);
  for (nn::Parameter* p : params) {
    if (p->name.rfind(layer, 0) == 0) p->value.setZero();
  }
}

ModelAssembly small_model(int classes, std::uint64_t seed = 0) {
  const InputSpec in{3, {}, classes};
  return build_backbone(ArchSpec{"mlp", 1, 8, 8}, in, seed);
}

SourceBatch source_batch(int n, int classes, std::uint64_t seed) {
  SourceBatch b{random_batch(n, 3, seed), {}};
  for (int i = 0; i < n; ++i) b.labels.push_back(i % classes);
  return b;
}

// ---- losses ----

TEST(CrossEntropy, UniformLogits) {
  const Matrix logits = Matrix::Zero(4, 5);
  const std::vector<int> y{0, 1, 2, 3};
  EXPECT_NEAR(cross_entropy(logits, y).value, std::log(5.0), 1e-12);
}

TEST(CrossEntropy, ClampedRowHasNoGradient) {
  const Matrix logits = rows({{50.0, 0.0}, {0.0, 0.0}});
  const std::vector<int> y{1, 0};
  const ValueGrad ce = cross_entropy(logits, y);
  EXPECT_NEAR(ce.value, (-std::log(kProbEpsilon) + kLn2) / 2.0, 1e-9);
  EXPECT_TRUE(ce.grad.row(0).isZero());
  EXPECT_FALSE(ce.grad.row(1).isZero());
}

TEST(DomainBce, HalfProbabilityIsLn2) {
  const Matrix logits = Matrix::Zero(6, 1);
  const std::vector<int> d{0, 0, 0, 1, 1, 1};
  EXPECT_NEAR(domain_bce(logits, d).value, kLn2, 1e-12);
}

TEST(DomainBce, ConfidentCorrectIsClamped) {
  const Matrix logits = rows({{-100.0}, {100.0}});
  const std::vector<int> d{0, 1};
  const DomainBce b = domain_bce(logits, d);
  EXPECT_NEAR(b.value, -std::log(1.0 - kProbEpsilon), 1e-12);
  EXPECT_TRUE(b.grad.isZero());
  EXPECT_DOUBLE_EQ(b.accuracy, 1.0);
}

// Discriminator D(z) = sigmoid(1.5 z) on two source and two target scalars.
TEST(DomainBce, HandEvaluatedOneParameterDiscriminator) {
  const double a = 1.5;
  const std::vector<double> zs{0.5, 2.0}, zt{-1.0, 1.0};
  Matrix logits(4, 1);
  logits << a * zs[0], a * zs[1], a * zt[0], a * zt[1];
  const std::vector<int> d{0, 0, 1, 1};
  // -log(1 - sigmoid(l)) = log(1 + e^l); -log(sigmoid(l)) = log(1 + e^-l).
  const double expected =
      (std::log1p(std::exp(0.75)) + std::log1p(std::exp(3.0)) + std::log1p(std::exp(1.5)) + std::log1p(std::exp(-1.5))) /
      4.0;
  EXPECT_NEAR(expected, 1.522071, 1e-6);
  EXPECT_NEAR(domain_bce(logits, d).value, expected, 1e-12);
}

TEST(Multilinear, HandOuterProducts) {
  Matrix out = cdan_multilinear(rows({{1.0, 2.0}}), rows({{0.5, 0.5}}), 1024);
  ASSERT_EQ(out.cols(), 4);
  EXPECT_TRUE(out.isApprox(rows({{0.5, 0.5, 1.0, 1.0}})));
  out = cdan_multilinear(rows({{3.0}}), rows({{0.2, 0.8}}), 1024);
  EXPECT_TRUE(out.isApprox(rows({{0.6, 2.4}})));
}

TEST(Multilinear, CapSwitchesToRandomisedMap) {
  const Multilinear m(100, 50, 64, 1);
  EXPECT_TRUE(m.randomized());
  EXPECT_EQ(m.out_dim(), 64);
  EXPECT_EQ(cdan_multilinear(random_batch(3, 100, 1), Matrix::Constant(3, 50, 0.02), 64).cols(), 64);
}

TEST(Multilinear, UnderCapEqualsExplicitProduct) {
  const Matrix f = random_batch(5, 4, 2);
  const Matrix p = softmax(random_batch(5, 3, 3));
  const Matrix out = cdan_multilinear(f, p, 12);
  for (int i = 0; i < 5; ++i)
    for (int a = 0; a < 4; ++a)
      for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(out(i, a * 3 + c), f(i, a) * p(i, c));
}

TEST(EntropyWeights, OneHotVersusUniform) {
  const std::vector<double> w = entropy_weights(rows({{1.0, 0.0}, {0.5, 0.5}}));
  EXPECT_NEAR(w[0] / w[1], 4.0 / 3.0, 1e-12);
  EXPECT_NEAR((w[0] + w[1]) / 2.0, 1.0, 1e-12);
  for (double x : entropy_weights(Matrix::Constant(4, 3, 1.0 / 3.0))) EXPECT_NEAR(x, 1.0, 1e-12);
}

TEST(Mcc, ReferenceCases) {
  EXPECT_NEAR(mcc_loss(rows({{1000.0, 0.0, 0.0}, {1000.0, 0.0, 0.0}}), 1.0), 0.0, 1e-6);
  EXPECT_NEAR(mcc_loss(Matrix::Zero(5, 4), 2.5), 0.75, 1e-6);
  EXPECT_NEAR(mcc_loss(rows({{1000.0, 0.0}, {0.0, 1000.0}}), 1.0), 0.0, 1e-6);
}

TEST(Mdd, TargetDisparityClampAtOne) {
  const Matrix aux = rows({{100.0, 0.0}, {0.0, 100.0}});
  const std::vector<int> h{0, 1};
  EXPECT_NEAR(mdd_target_disparity(aux, h).value, -std::log(kProbEpsilon), 1e-9);
  EXPECT_NEAR(-std::log(kProbEpsilon), 13.8155, 1e-4);
}

TEST(Mdd, UniformAuxIsFiveLn2) {
  ModelAssembly model = small_model(2);
  model.add_aux_head();
  zero_output_layer(*model.aux_head, "aux.fc1");
  const LossBundle b = mdd_loss(model, source_batch(4, 2, 1), random_batch(4, 3, 2), 4.0, 1.0);
  EXPECT_NEAR(b.adaptation, 5.0 * kLn2, 1e-6);
  EXPECT_NEAR(b.diagnostics.at("source_disparity"), kLn2, 1e-9);
  EXPECT_NEAR(b.diagnostics.at("target_disparity"), kLn2, 1e-9);
}

TEST(Mdd, ZeroMarginRejected) {
  ModelAssembly model = small_model(2);
  model.add_aux_head();
  try {
    mdd_loss(model, source_batch(4, 2, 1), random_batch(4, 3, 2), 0.0, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kPrecondition);
  }
}

TEST(Dann, ZeroDiscriminatorIsLn2) {
  ModelAssembly model = small_model(3);
  model.add_discriminator(model.feature_dim());
  zero_output_layer(*model.discriminator, "discriminator.out");
  const LossBundle b = dann_loss(model, source_batch(5, 3, 1), random_batch(5, 3, 2), 1.0);
  EXPECT_NEAR(b.adaptation, kLn2, 1e-6);
}

TEST(Cdan, UniformPredictionsReduceToDannOnMultilinearFeatures) {
  ModelAssembly model = small_model(3);
  zero_output_layer(*model.classifier, "classifier.fc1");
  const Multilinear ml(model.feature_dim(), 3, 1024, 0);
  model.add_discriminator(ml.out_dim());
  const SourceBatch s = source_batch(4, 3, 1);
  const Matrix t = random_batch(4, 3, 2);
  const LossBundle with = cdan_loss(model, s, t, 1.0, true, ml, 1.0);
  const LossBundle without = cdan_loss(model, s, t, 1.0, false, ml, 1.0);
  EXPECT_NEAR(with.adaptation, without.adaptation, 1e-12);

  Matrix feats(8, model.feature_dim());
  feats << model.backbone->forward(s.features, nullptr), model.backbone->forward(t, nullptr);
  const Matrix probs = Matrix::Constant(8, 3, 1.0 / 3.0);
  const Matrix logits = model.discriminator->forward(ml.forward(feats, probs), nullptr);
  const std::vector<int> d{0, 0, 0, 0, 1, 1, 1, 1};
  EXPECT_NEAR(without.adaptation, domain_bce(logits, d).value, 1e-12);
}

TEST(Alignment, HandEvaluatedSingleSample) {
  const Matrix p = rows({{0.6, 0.3, 0.1}});
  RowVector src(3), tgt(3);
  src << 0.2, 0.5, 0.3;
  tgt << 0.5, 0.3, 0.2;
  // p * src/tgt = [0.24, 0.5, 0.15], sum 0.89.
  const Matrix a = align_distribution(p, src, tgt);
  EXPECT_NEAR(a(0, 0), 0.24 / 0.89, 1e-12);
  EXPECT_NEAR(a(0, 1), 0.50 / 0.89, 1e-12);
  EXPECT_NEAR(a(0, 2), 0.15 / 0.89, 1e-12);

  MarginalTracker m(3);
  m.source = src;
  m.target = tgt;
  const Matrix ps = rows({{0.9, 0.05, 0.05}});
  PseudoLabels pl = adamatch_pseudo_labels(ps, p, m, 0.6);
  EXPECT_NEAR(pl.threshold, 0.54, 1e-12);
  ASSERT_EQ(pl.labels.size(), 1u);
  EXPECT_EQ(pl.labels[0], 1);
  EXPECT_TRUE(pl.mask[0]);
  // CE of a strong-view logit row [0, 1, 0] against pseudo-label 1.
  const std::vector<int> y{pl.labels[0]};
  EXPECT_NEAR(cross_entropy(rows({{0.0, 1.0, 0.0}}), y).value, -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0)), 1e-12);
  EXPECT_NEAR(-std::log(std::exp(1.0) / (std::exp(1.0) + 2.0)), 0.551445, 1e-6);

  pl = adamatch_pseudo_labels(ps, p, m, 1.0);
  EXPECT_FALSE(pl.mask[0]);
  EXPECT_DOUBLE_EQ(pl.mask_rate, 0.0);
}

TEST(Alignment, ZeroRatioKeepsEverything) {
  MarginalTracker m(3);
  const PseudoLabels pl = adamatch_pseudo_labels(softmax(random_batch(4, 3, 1)), softmax(random_batch(6, 3, 2)), m, 0.0);
  EXPECT_DOUBLE_EQ(pl.threshold, 0.0);
  EXPECT_DOUBLE_EQ(pl.mask_rate, 1.0);
}

TEST(AdaMatch, ZeroRatioMasksEverythingIn) {
  ModelAssembly model = small_model(3);
  const SourceBatch s = source_batch(6, 3, 1);
  const Matrix t = random_batch(6, 3, 2);
  VectorAugmenter aug(RowVector::Ones(3));
  Rng rng(0);
  MarginalTracker m(3);
  const LossBundle b = adamatch_loss(model, s, t, aug, rng, m, 0.0, 1.0);
  EXPECT_DOUBLE_EQ(b.diagnostics.at("mask_rate"), 1.0);
  EXPECT_GT(b.adaptation, 0.0);
}

TEST(AdaMatch, Warmup) {
  EXPECT_DOUBLE_EQ(adamatch_warmup(0.0), 0.0);
  EXPECT_NEAR(adamatch_warmup(0.25), 0.5, 1e-12);
  EXPECT_NEAR(adamatch_warmup(0.5), 1.0, 1e-12);
  EXPECT_NEAR(adamatch_warmup(1.0), 1.0, 1e-12);
}

TEST(NtXent, EqualEmbeddingsGiveLog2nMinus1) {
  for (int n : {2, 4, 7}) {
    const Matrix e = Matrix::Constant(2 * n, 3, 1.0 / std::sqrt(3.0));
    EXPECT_NEAR(nt_xent(e, 0.5).value, std::log(2.0 * n - 1.0), 1e-9) << n;
  }
}

TEST(NtXent, GradientMatchesFiniteDifferences) {
  const Matrix e = random_batch(6, 4, 21);
  const ValueGrad vg = nt_xent(e, 0.5);
  const double h = 1e-6;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 4; ++j) {
      Matrix ep = e, em = e;
      ep(i, j) += h;
      em(i, j) -= h;
      const double fd = (nt_xent(ep, 0.5).value - nt_xent(em, 0.5).value) / (2 * h);
      EXPECT_NEAR(vg.grad(i, j), fd, 1e-6);
    }
}

// ---- method objects ----

TEST(Registry, DefaultsAndErrors) {
  MethodConfig c;
  c.name = "mdd";
  const MethodConfig r = resolve_method_config(c);
  EXPECT_DOUBLE_EQ(r.params.at("margin"), kDefaultMddMargin);
  c.name = "memsac";
  try {
    resolve_method_config(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownMethod);
  }
  c.name = "dann";
  c.weight = -1.0;
  EXPECT_THROW(resolve_method_config(c), ConfigError);
  c.weight = 1.0;
  c.params["margn"] = 1.0;
  EXPECT_THROW(resolve_method_config(c), ConfigError);
}

TEST(Methods, SourceOnlyHasNoAdaptation) {
  ModelAssembly model = small_model(3);
  auto m = make_method(resolve_method_config(MethodConfig{"source-only", 1.0, {}}));
  m->prepare(model);
  const LossBundle b = m->step(model, source_batch(4, 3, 1), random_batch(4, 3, 2), {});
  EXPECT_DOUBLE_EQ(b.adaptation, 0.0);
  EXPECT_DOUBLE_EQ(b.total, b.ce_source);
}

// With w = 0 every method must leave exactly the source-only gradients on
// the backbone and classifier.
TEST(Methods, ZeroWeightGradientsEqualSourceOnly) {
  const SourceBatch s = source_batch(8, 3, 1);
  const Matrix t = random_batch(8, 3, 2);
  auto grads = [&](const std::string& name) {
    ModelAssembly model = small_model(3, 4);
    MethodContext ctx;
    ctx.augmenter = std::make_shared<VectorAugmenter>(RowVector::Ones(3));
    auto m = make_method(resolve_method_config(MethodConfig{name, 0.0, {}}), ctx);
    m->prepare(model);
    const LossBundle b = m->step(model, s, t, StepContext{3, 0.3, 0.7});
    EXPECT_DOUBLE_EQ(b.total, b.ce_source) << name;
    std::vector<Matrix> out;
    for (nn::Parameter* p : model.backbone_parameters()) out.push_back(p->grad);
    for (nn::Parameter* p : model.classifier_parameters()) out.push_back(p->grad);
    return out;
  };
  const auto reference = grads("source-only");
  for (const std::string name : {"dann", "cdan", "mcc", "mdd", "adamatch"}) {
    const auto g = grads(name);
    ASSERT_EQ(g.size(), reference.size());
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_TRUE(g[i] == reference[i]) << name << " param " << i;
  }
}

TEST(Methods, MismatchedTargetWidthIsShapeError) {
  ModelAssembly model = small_model(3);
  auto m = make_method(resolve_method_config(MethodConfig{"dann", 1.0, {}}));
  m->prepare(model);
  try {
    m->step(model, source_batch(4, 3, 1), random_batch(4, 5, 2), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShape);
  }
}

}  // namespace
}  // namespace udab

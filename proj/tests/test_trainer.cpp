#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "udab/error.hpp"
#include "udab/records.hpp"
#include "udab/trainer.hpp"

namespace udab {
namespace {

SyntheticSpec small_spec(double shift = 35.0) {
  SyntheticSpec spec = DatasetRef::default_synthetic_spec();
  spec.samples_per_domain = 400;
  spec.shift.magnitude = shift;
  return spec;
}

RunConfig quick_config(const std::string& method, double weight = 1.0) {
  RunConfig c = desk_preset();
  c.dataset.synthetic = small_spec();
  c.method.name = method;
  c.method.weight = weight;
  c.iterations = 60;
  c.validate_every = 30;
  return c;
}

// Multinomial logistic regression fitted by full-batch gradient descent on
// standardized features. The objective is convex, so this is a reference
// for how well a linear model can do on the split.
double logistic_oracle_accuracy(const LabeledSet& train, const LabeledSet& test, int classes) {
  const Matrix& x = train.features();
  const auto y = train.labels(LabelReader::kEvaluation);
  const RowVector mu = x.colwise().mean();
  const RowVector sd = ((x.rowwise() - mu).array().square().colwise().sum() / x.rows()).sqrt().max(1e-12);
  auto standardize = [&](const Matrix& m) -> Matrix { return (m.rowwise() - mu).array().rowwise() / sd.array(); };
  const Matrix xs = standardize(x);
  Matrix w = Matrix::Zero(x.cols(), classes);
  RowVector b = RowVector::Zero(classes);
  for (int it = 0; it < 2000; ++it) {
    Matrix logits = (xs * w).rowwise() + b;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      logits.row(i).array() -= logits.row(i).maxCoeff();
      logits.row(i) = logits.row(i).array().exp();
      logits.row(i) /= logits.row(i).sum();
      logits(i, y[static_cast<std::size_t>(i)]) -= 1.0;
    }
    logits /= static_cast<double>(xs.rows());
    w -= 0.5 * xs.transpose() * logits;
    b -= 0.5 * logits.colwise().sum();
  }
  const Matrix scores = (standardize(test.features()) * w).rowwise() + b;
  const auto yt = test.labels(LabelReader::kEvaluation);
  int correct = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index k;
    scores.row(i).maxCoeff(&k);
    correct += static_cast<int>(k) == yt[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(correct) / static_cast<double>(scores.rows());
}

TEST(Schedule, GrlCoefficient) {
  EXPECT_DOUBLE_EQ(grl_lambda_schedule(0.0), 0.0);
  EXPECT_NEAR(grl_lambda_schedule(0.5), 0.98661, 1e-5);
  EXPECT_NEAR(grl_lambda_schedule(1.0), 0.99991, 1e-5);
  EXPECT_THROW(grl_lambda_schedule(1.5), Error);
}

TEST(Schedule, CosineLearningRate) {
  OptimizerSpec spec;
  spec.learning_rate = 0.1;
  spec.schedule = LrSchedule::kCosine;
  EXPECT_DOUBLE_EQ(scheduled_lr(spec, 0, 100), 0.1);
  EXPECT_NEAR(scheduled_lr(spec, 50, 100), 0.05, 1e-12);
  spec.schedule = LrSchedule::kConstant;
  EXPECT_DOUBLE_EQ(scheduled_lr(spec, 70, 100), 0.1);
}

TEST(Sampler, EveryEpochIsAPermutation) {
  CyclicSampler s(7, 3);
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::set<std::size_t> seen;
    for (std::size_t i : s.next(7)) seen.insert(i);
    EXPECT_EQ(seen.size(), 7u);
  }
  CyclicSampler a(10, 1), b(10, 1);
  EXPECT_EQ(a.next(25), b.next(25));
}

TEST(Evaluate, ConstantAndPerfectPredictors) {
  const DatasetBundle data = make_synthetic(small_spec());
  const InputSpec in = input_spec_of(data);
  ModelAssembly m = build_backbone(resolve_arch(desk_preset().arch, in), in, 0);
  std::vector<nn::Parameter*> head = m.classifier_parameters();
  for (nn::Parameter* p : head) {
    if (p->name == "classifier.fc1.weight") p->value.setZero();
    if (p->name == "classifier.fc1.bias") {
      p->value.setZero();
      p->value(0, 2) = 5.0;
    }
  }
  const auto labels = data.target_test.labels(LabelReader::kEvaluation);
  const double share = static_cast<double>(std::count(labels.begin(), labels.end(), 2)) / labels.size();
  EXPECT_DOUBLE_EQ(evaluate(m, data.target_test), share);

  // Relabel a split with the model's own argmax: accuracy must be 1.
  ModelAssembly fresh = build_backbone(resolve_arch(desk_preset().arch, in), in, 1);
  const Matrix p = predict(fresh, data.source_test.features());
  std::vector<int> own(p.rows());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index k;
    p.row(i).maxCoeff(&k);
    own[i] = static_cast<int>(k);
  }
  const LabeledSet relabeled(data.source_test.features(), own, Domain::kSource);
  EXPECT_DOUBLE_EQ(evaluate(fresh, relabeled), 1.0);

  const LabeledSet empty(Matrix(0, 2), {}, Domain::kTarget);
  try {
    evaluate(fresh, empty);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyInput);
  }
}

TEST(TrainRun, ZeroIterationsEvaluatesInitialModel) {
  RunConfig c = quick_config("source-only");
  c.iterations = 0;
  const DatasetBundle data = load_dataset(c.dataset);
  const RunRecord r = train_run(c);
  const InputSpec in = input_spec_of(data);
  const ModelAssembly init = build_backbone(resolve_arch(c.arch, in), in, c.seed);
  EXPECT_DOUBLE_EQ(r.metrics.lambda_s, 100.0 * evaluate(init, data.source_test));
  EXPECT_DOUBLE_EQ(r.metrics.lambda_t, 100.0 * evaluate(init, data.target_test));
}

TEST(TrainRun, ZeroWeightMatchesSourceOnly) {
  const RunRecord base = train_run(quick_config("source-only"));
  for (const std::string m : {"dann", "cdan", "mcc", "mdd", "adamatch"}) {
    const RunRecord r = train_run(quick_config(m, 0.0));
    EXPECT_EQ(r.metrics.lambda_s, base.metrics.lambda_s) << m;
    EXPECT_EQ(r.metrics.lambda_t, base.metrics.lambda_t) << m;
  }
}

TEST(TrainRun, Deterministic) {
  const RunRecord a = train_run(quick_config("dann"));
  const RunRecord b = train_run(quick_config("dann"));
  EXPECT_EQ(to_json_line([&] { RunRecord x = a; x.wall_seconds = 0; return x; }()),
            to_json_line([&] { RunRecord x = b; x.wall_seconds = 0; return x; }()));
}

TEST(TrainRun, SeparableTaskMatchesConvexOracle) {
  RunConfig c = desk_preset();
  c.dataset.synthetic.num_classes = 4;
  c.dataset.synthetic.feature_dim = 8;
  c.dataset.synthetic.samples_per_domain = 800;
  c.dataset.synthetic.within_class_std = 0.4;
  c.dataset.synthetic.shift.magnitude = 0.0;
  c.iterations = 200;
  c.validate_every = 200;
  const DatasetBundle data = load_dataset(c.dataset);
  const double oracle = logistic_oracle_accuracy(data.source_train, data.target_test, 4);
  EXPECT_GE(oracle, 0.98);
  const RunRecord r = train_run(c);
  EXPECT_GE(r.metrics.lambda_t, 95.0);
}

TEST(TrainRun, TargetLabelsNeverReachTraining) {
  LabelAudit& audit = LabelAudit::instance();
  for (const std::string m : {"dann", "adamatch", "mdd"}) {
    audit.reset();
    train_run(quick_config(m));
    for (const LabelReader r : {LabelReader::kSourceTraining, LabelReader::kPretext}) {
      EXPECT_EQ(audit.count(Domain::kTarget, r), 0u) << m << " " << to_string(r);
    }
    EXPECT_GT(audit.count(Domain::kTarget, LabelReader::kEvaluation), 0u);
  }
}

TEST(TrainRun, DivergenceAborts) {
  RunConfig c = quick_config("dann");
  c.optimizer.learning_rate = 1e300;
  c.optimizer.schedule = LrSchedule::kConstant;
  try {
    train_run(c);
    FAIL() << "expected an aborted run";
  } catch (const AbortedRun& e) {
    EXPECT_GE(e.step(), 0);
  }
}

TEST(TrainRun, ValidationLogCadence) {
  RunConfig c = quick_config("mcc");
  c.iterations = 70;
  c.validate_every = 30;
  const RunRecord r = train_run(c);
  std::vector<std::int64_t> steps;
  for (const auto& e : r.log) steps.push_back(e.step);
  EXPECT_EQ(steps, (std::vector<std::int64_t>{30, 60, 70}));
}

TEST(Config, HashIgnoresSeedOnly) {
  RunConfig a = quick_config("dann");
  RunConfig b = a;
  b.seed = 9;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.method.weight = 0.5;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, ResolveRejectsBadValues) {
  RunConfig c = quick_config("dann");
  c.batch_size = 0;
  EXPECT_THROW(resolve_run_config(c), ConfigError);
  c = quick_config("nope");
  try {
    resolve_run_config(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownMethod);
  }
}

TEST(Records, JsonRoundTrip) {
  RunRecord r = train_run(quick_config("source-only"));
  r.tags["method"] = "source-only";
  const RunRecord back = run_record_from_json(to_json_line(r));
  EXPECT_EQ(to_json_line(back), to_json_line(r));
}

}  // namespace
}  // namespace udab

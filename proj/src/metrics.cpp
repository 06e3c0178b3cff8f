#include "udab/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "udab/data.hpp"
#include "udab/error.hpp"
#include "udab/losses.hpp"
#include "udab/nn.hpp"
#include "udab/rng.hpp"
#include "udab/trainer.hpp"

namespace udab {

DropMetrics relative_drop(double lambda_s, double lambda_t) {
  if (lambda_s == 0.0) throw Error(ErrorCode::kDivisionDomain, "relative drop is undefined for lambda_s = 0");
  if (!std::isfinite(lambda_s) || !std::isfinite(lambda_t)) {
    throw Error(ErrorCode::kNumeric, "relative drop needs finite accuracies");
  }
  return DropMetrics{100.0 * (lambda_s - lambda_t) / lambda_s, lambda_s - lambda_t};
}

namespace {

Matrix rows_of(const Matrix& x, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

/// Trains a fresh classifier on (x_train, y_train) and returns held-out accuracy.
double probe_once(const Matrix& x_train, const std::vector<int>& y_train, const Matrix& x_test,
                  const std::vector<int>& y_test, std::uint64_t seed, const ProbeOptions& opt) {
  // Standardize with training statistics only.
  const RowVector mean = x_train.colwise().mean();
  RowVector scale = ((x_train.rowwise() - mean).array().square().colwise().sum() /
                     std::max<double>(1.0, static_cast<double>(x_train.rows())))
                        .sqrt()
                        .matrix();
  for (Eigen::Index j = 0; j < scale.size(); ++j) scale(j) = scale(j) > 1e-12 ? 1.0 / scale(j) : 1.0;
  const Matrix train = (x_train.rowwise() - mean).array().rowwise() * scale.array();
  const Matrix test = (x_test.rowwise() - mean).array().rowwise() * scale.array();

  Rng init(derive_seed(seed, "probe-init"));
  nn::Sequential net;
  net.add(std::make_unique<nn::Linear>(static_cast<int>(train.cols()), opt.hidden, init, "probe.fc0"));
  net.add(std::make_unique<nn::Relu>(opt.hidden));
  net.add(std::make_unique<nn::Linear>(opt.hidden, 1, init, "probe.out"));
  std::vector<nn::Parameter*> params;
  net.collect(params);
  OptimizerSpec spec;
  spec.kind = OptimizerKind::kAdam;
  spec.learning_rate = opt.learning_rate;
  spec.schedule = LrSchedule::kConstant;
  Optimizer optimizer(spec, params);

  const std::size_t n = static_cast<std::size_t>(train.rows());
  const std::size_t batch = std::min<std::size_t>(n, static_cast<std::size_t>(opt.batch_size));
  CyclicSampler sampler(n, derive_seed(seed, "probe-batches"));
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>((n + batch - 1) / batch);
  for (std::int64_t s = 0; s < opt.epochs * steps_per_epoch; ++s) {
    const auto rows = sampler.next(batch);
    std::vector<int> y;
    for (const std::size_t r : rows) y.push_back(y_train[r]);
    nn::Cache cache;
    const Matrix logits = net.forward(rows_of(train, rows), &cache);
    const DomainBce bce = domain_bce(logits, y);
    nn::zero_grad(params);
    net.backward(bce.grad, cache);
    optimizer.step(opt.learning_rate);
  }
  const Matrix logits = net.forward(test, nullptr);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int pred = logits(i, 0) > 0.0 ? 1 : 0;
    if (pred == y_test[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

}  // namespace

ProbeCurve domain_probe(const Matrix& source_features, const Matrix& target_features,
                        const std::vector<double>& fractions, std::uint64_t seed, const ProbeOptions& options) {
  if (source_features.rows() == 0 || target_features.rows() == 0) {
    throw Error(ErrorCode::kEmptyInput, "domain probe needs non-empty source and target features");
  }
  if (source_features.cols() != target_features.cols()) {
    throw Error(ErrorCode::kShape, "source and target feature widths differ");
  }
  if (fractions.empty()) throw Error(ErrorCode::kPrecondition, "domain probe needs at least one fraction");
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (!(fractions[i] > 0.0 && fractions[i] <= 1.0)) {
      throw Error(ErrorCode::kPrecondition, "probe fractions must lie in (0, 1]");
    }
    if (i > 0 && !(fractions[i] > fractions[i - 1])) {
      throw Error(ErrorCode::kPrecondition, "probe fractions must be strictly increasing");
    }
  }

  ProbeCurve curve;
  curve.seed = seed;
  curve.fractions = fractions;
  const std::size_t ns = static_cast<std::size_t>(source_features.rows());
  const std::size_t nt = static_cast<std::size_t>(target_features.rows());
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    const std::uint64_t fseed = derive_seed(seed, "probe-fraction", k);
    std::vector<std::size_t> t_rows = random_indices(nt, fractions[k], derive_seed(fseed, "target"));
    // Equal counts per domain so chance level is 0.5.
    const std::size_t m = std::min(t_rows.size(), ns);
    t_rows.resize(m);
    Rng pick(derive_seed(fseed, "source"));
    std::vector<std::size_t> s_rows = pick.sample_without_replacement(ns, m);

    Matrix pooled(static_cast<Eigen::Index>(2 * m), source_features.cols());
    pooled << rows_of(source_features, s_rows), rows_of(target_features, t_rows);
    std::vector<int> domains(2 * m, 0);
    std::fill(domains.begin() + static_cast<std::ptrdiff_t>(m), domains.end(), 1);
    if (options.shuffle_labels) {
      Rng shuffle(derive_seed(fseed, "shuffle"));
      shuffle.shuffle(domains);
    }
    const SplitIndices split = train_test_split_indices(domains, options.train_share, derive_seed(fseed, "split"));
    if (split.test.empty() || split.train.empty()) {
      throw Error(ErrorCode::kEmptySubset, "fraction " + std::to_string(fractions[k]) + " leaves no held-out rows");
    }
    std::vector<int> y_train, y_test;
    for (const std::size_t r : split.train) y_train.push_back(domains[r]);
    for (const std::size_t r : split.test) y_test.push_back(domains[r]);
    curve.discriminator_accuracy.push_back(probe_once(rows_of(pooled, split.train), y_train,
                                                      rows_of(pooled, split.test), y_test, fseed, options));
  }
  return curve;
}

void write_probe_csv(const std::filesystem::path& path, const ProbeCurve& curve) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "fraction,accuracy,seed\n";
  out << std::setprecision(6) << std::fixed;
  for (std::size_t i = 0; i < curve.fractions.size(); ++i) {
    out << curve.fractions[i] << ',' << curve.discriminator_accuracy[i] << ',' << curve.seed << '\n';
  }
}

ProbeCurve read_probe_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  ProbeCurve curve;
  std::string line;
  std::getline(in, line);
  if (line != "fraction,accuracy,seed") throw Error(ErrorCode::kIo, path.string() + ": not a probe CSV");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f, a, s;
    if (!std::getline(ss, f, ',') || !std::getline(ss, a, ',') || !std::getline(ss, s, ',')) {
      throw Error(ErrorCode::kIo, path.string() + ": malformed row '" + line + "'");
    }
    curve.fractions.push_back(std::stod(f));
    curve.discriminator_accuracy.push_back(std::stod(a));
    curve.seed = std::stoull(s);
  }
  return curve;
}

}  // namespace udab

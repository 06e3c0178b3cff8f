#include "udab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "udab/error.hpp"
#include "udab/rng.hpp"
#include "udab/zoo.hpp"

namespace udab {

namespace {
const double kMaxNll = -std::log(kProbEpsilon);
}  // namespace

ValueGrad cross_entropy(const Matrix& logits, std::span<const int> labels) {
  const Eigen::Index n = logits.rows();
  if (n == 0 || static_cast<std::size_t>(n) != labels.size()) {
    throw Error(ErrorCode::kShape, "cross_entropy: logits and labels disagree");
  }
  ValueGrad out;
  out.grad = softmax(logits);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    const double nll = lse - logits(i, y);
    if (nll > kMaxNll) {
      // p_y below the probability floor: constant loss, no gradient.
      out.value += kMaxNll;
      out.grad.row(i).setZero();
      continue;
    }
    out.value += nll;
    out.grad(i, y) -= 1.0;
  }
  out.value /= static_cast<double>(n);
  out.grad /= static_cast<double>(n);
  return out;
}

std::vector<double> row_entropy(const Matrix& probs) {
  std::vector<double> h(static_cast<std::size_t>(probs.rows()), 0.0);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    for (Eigen::Index j = 0; j < probs.cols(); ++j) {
      const double p = probs(i, j);
      if (p > 0.0) h[static_cast<std::size_t>(i)] -= p * std::log(p);
    }
  }
  return h;
}

std::vector<double> entropy_weights(const Matrix& probs) {
  std::vector<double> w = row_entropy(probs);
  double sum = 0.0;
  for (double& x : w) {
    x = 1.0 + std::exp(-x);
    sum += x;
  }
  const double scale = static_cast<double>(w.size()) / sum;
  for (double& x : w) x *= scale;
  return w;
}

DomainBce domain_bce(const Matrix& logits, std::span<const int> domains, std::span<const double> weights) {
  const Eigen::Index n = logits.rows();
  if (n == 0) throw Error(ErrorCode::kEmptyBatch, "domain_bce on an empty batch");
  if (logits.cols() != 1 || static_cast<std::size_t>(n) != domains.size()) {
    throw Error(ErrorCode::kShape, "domain_bce expects n x 1 logits and n domain ids");
  }
  DomainBce out;
  out.grad = Matrix::Zero(n, 1);
  int correct = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const double w = weights.empty() ? 1.0 : weights[k];
    const double z = logits(i, 0);
    const double p = 1.0 / (1.0 + std::exp(-z));
    const double pc = std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon);
    const bool target = domains[k] == 1;
    out.value += w * -(target ? std::log(pc) : std::log(1.0 - pc));
    if (p == pc) out.grad(i, 0) = w * (p - (target ? 1.0 : 0.0));
    if ((p >= 0.5) == target) ++correct;
  }
  out.value /= static_cast<double>(n);
  out.grad /= static_cast<double>(n);
  out.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return out;
}

Multilinear::Multilinear(int feature_dim, int num_classes, int cap, std::uint64_t seed)
    : feature_dim_(feature_dim), num_classes_(num_classes) {
  if (cap < 1) throw Error(ErrorCode::kPrecondition, "multilinear cap must be positive");
  randomized_ = static_cast<long long>(feature_dim) * num_classes > cap;
  out_dim_ = randomized_ ? cap : feature_dim * num_classes;
  if (randomized_) {
    Rng rng(derive_seed(seed, "multilinear-projection"));
    rf_.resize(cap, feature_dim);
    rg_.resize(cap, num_classes);
    for (Eigen::Index i = 0; i < rf_.size(); ++i) rf_.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < rg_.size(); ++i) rg_.data()[i] = rng.normal();
  }
}

Matrix Multilinear::forward(const Matrix& f, const Matrix& p) const {
  if (f.cols() != feature_dim_ || p.cols() != num_classes_ || f.rows() != p.rows()) {
    throw Error(ErrorCode::kShape, "multilinear: unexpected feature or probability shape");
  }
  if (randomized_) {
    const Matrix a = f * rf_.transpose();
    const Matrix b = p * rg_.transpose();
    return a.cwiseProduct(b) / std::sqrt(static_cast<double>(out_dim_));
  }
  Matrix out(f.rows(), out_dim_);
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    for (int a = 0; a < feature_dim_; ++a) {
      for (int b = 0; b < num_classes_; ++b) out(i, a * num_classes_ + b) = f(i, a) * p(i, b);
    }
  }
  return out;
}

Matrix Multilinear::backward_features(const Matrix& f, const Matrix& p, const Matrix& g) const {
  if (randomized_) {
    const Matrix b = p * rg_.transpose();
    return (g.cwiseProduct(b) / std::sqrt(static_cast<double>(out_dim_))) * rf_;
  }
  Matrix df = Matrix::Zero(f.rows(), feature_dim_);
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    for (int a = 0; a < feature_dim_; ++a) {
      double s = 0.0;
      for (int b = 0; b < num_classes_; ++b) s += g(i, a * num_classes_ + b) * p(i, b);
      df(i, a) = s;
    }
  }
  return df;
}

Matrix cdan_multilinear(const Matrix& features, const Matrix& probs, int cap, std::uint64_t seed) {
  return Multilinear(static_cast<int>(features.cols()), static_cast<int>(probs.cols()), cap, seed)
      .forward(features, probs);
}

ValueGrad mcc_loss_grad(const Matrix& logits, double temperature) {
  if (logits.rows() < 1) throw Error(ErrorCode::kEmptyBatch, "mcc_loss needs at least one row");
  if (!(temperature > 0.0)) throw Error(ErrorCode::kPrecondition, "temperature must be positive");
  if (!logits.allFinite()) throw Error(ErrorCode::kNumeric, "mcc_loss: non-finite logits");
  const Eigen::Index n = logits.rows();
  const Eigen::Index c = logits.cols();
  const Matrix probs = softmax(logits / temperature);
  const std::vector<double> w = entropy_weights(probs);
  const Eigen::Map<const Vector> wv(w.data(), n);

  // K = Y^T diag(w) Y; row sums s_j = sum_i w_i y_ij because rows of Y sum to 1.
  const Matrix weighted = probs.array().colwise() * wv.array();
  const Vector diag = (weighted.array() * probs.array()).colwise().sum().transpose();
  const Vector sums = weighted.colwise().sum().transpose();

  ValueGrad out;
  Vector coef_sq = Vector::Zero(c);  // d(loss)/d(K_jj)
  Vector coef_sum = Vector::Zero(c); // d(loss)/d(s_j)
  // Classes carrying almost no predicted mass are treated as absent;
  // otherwise their (tiny) confusion row would count as pure confusion.
  const double min_mass = kProbEpsilon * static_cast<double>(n);
  for (Eigen::Index j = 0; j < c; ++j) {
    if (sums(j) <= min_mass) continue;
    out.value += 1.0 - diag(j) / sums(j);
    coef_sq(j) = -1.0 / (static_cast<double>(c) * sums(j));
    coef_sum(j) = diag(j) / (static_cast<double>(c) * sums(j) * sums(j));
  }
  out.value /= static_cast<double>(c);

  Matrix dprobs(n, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) {
      dprobs(i, j) = w[static_cast<std::size_t>(i)] * (2.0 * probs(i, j) * coef_sq(j) + coef_sum(j));
    }
  }
  out.grad.resize(n, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double dot = dprobs.row(i).dot(probs.row(i));
    out.grad.row(i) = probs.row(i).array() * (dprobs.row(i).array() - dot) / temperature;
  }
  return out;
}

double mcc_loss(const Matrix& logits, double temperature) { return mcc_loss_grad(logits, temperature).value; }

ValueGrad mdd_target_disparity(const Matrix& aux_logits, std::span<const int> pseudo_labels) {
  const Eigen::Index n = aux_logits.rows();
  if (n == 0) throw Error(ErrorCode::kEmptyBatch, "mdd target term on an empty batch");
  const Matrix p = softmax(aux_logits);
  ValueGrad out;
  out.grad = Matrix::Zero(n, aux_logits.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const int h = pseudo_labels[static_cast<std::size_t>(i)];
    // 1 - p_h summed from the other entries keeps precision near p_h = 1.
    const double rest = p.row(i).sum() - p(i, h);
    const double q = std::max(rest, kProbEpsilon);
    out.value += -std::log(q);
    if (rest > kProbEpsilon) {
      // d(-log(1 - p_h))/dz_k = p_h (delta_hk - p_k) / (1 - p_h)
      for (Eigen::Index k = 0; k < aux_logits.cols(); ++k) {
        out.grad(i, k) = p(i, h) * ((k == h ? 1.0 : 0.0) - p(i, k)) / rest;
      }
    }
  }
  out.value /= static_cast<double>(n);
  out.grad /= static_cast<double>(n);
  return out;
}

Matrix align_distribution(const Matrix& probs, const RowVector& source_marginal, const RowVector& target_marginal) {
  const RowVector ratio = source_marginal.array() / target_marginal.array().max(kProbEpsilon);
  Matrix out = probs.array().rowwise() * ratio.array();
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) /= out.row(i).sum();
  return out;
}

double adamatch_warmup(double progress) {
  const double t = std::clamp(progress, 0.0, 1.0);
  return 0.5 - std::cos(std::min(std::numbers::pi, 2.0 * std::numbers::pi * t)) / 2.0;
}

ValueGrad nt_xent(const Matrix& embeddings, double temperature) {
  if (!(temperature > 0.0)) throw Error(ErrorCode::kPrecondition, "temperature must be positive");
  const Eigen::Index m = embeddings.rows();
  if (m < 2 || m % 2 != 0) throw Error(ErrorCode::kShape, "nt_xent expects 2n rows");
  const Eigen::Index n = m / 2;

  Vector norms(m);
  Matrix u(m, embeddings.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    norms(i) = std::max(embeddings.row(i).norm(), 1e-8);
    u.row(i) = embeddings.row(i) / norms(i);
  }
  const Matrix sim = (u * u.transpose()) / temperature;

  ValueGrad out;
  Matrix dsim = Matrix::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index pos = i < n ? i + n : i - n;
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < m; ++k) {
      if (k != i) mx = std::max(mx, sim(i, k));
    }
    double denom = 0.0;
    for (Eigen::Index k = 0; k < m; ++k) {
      if (k != i) denom += std::exp(sim(i, k) - mx);
    }
    out.value += -sim(i, pos) + mx + std::log(denom);
    for (Eigen::Index k = 0; k < m; ++k) {
      if (k == i) continue;
      dsim(i, k) = std::exp(sim(i, k) - mx) / denom - (k == pos ? 1.0 : 0.0);
    }
  }
  out.value /= static_cast<double>(m);
  dsim /= static_cast<double>(m);
  const Matrix du = ((dsim + dsim.transpose()) * u) / temperature;
  out.grad.resize(m, embeddings.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    out.grad.row(i) = (du.row(i) - u.row(i) * u.row(i).dot(du.row(i))) / norms(i);
  }
  return out;
}

}  // namespace udab

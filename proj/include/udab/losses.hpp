#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "udab/tensor.hpp"

namespace udab {

/// Probability floor used wherever the log of a probability is taken.
inline constexpr double kProbEpsilon = 1e-6;

struct ValueGrad {
  double value = 0.0;
  Matrix grad;  // same shape as the differentiated input
};

/// Mean softmax cross-entropy over rows; grad is w.r.t. the logits. Rows
/// whose true-class probability is below eps contribute -log(eps) and no
/// gradient.
ValueGrad cross_entropy(const Matrix& logits, std::span<const int> labels);

/// Per-row Shannon entropy (nats) of probability rows.
std::vector<double> row_entropy(const Matrix& probs);

/// 1 + exp(-H(p_i)), rescaled to mean 1 over the rows.
std::vector<double> entropy_weights(const Matrix& probs);

struct DomainBce {
  double value = 0.0;
  Matrix grad;            // w.r.t. the n x 1 logits
  double accuracy = 0.0;  // threshold 0.5 on the sigmoid
};

/// Weighted mean binary cross-entropy of domain logits against domain ids
/// (0 source, 1 target). Probabilities are clamped to [eps, 1 - eps]; the
/// gradient is zero where the clamp is active. Empty `weights` means 1.
DomainBce domain_bce(const Matrix& logits, std::span<const int> domains, std::span<const double> weights = {});

/// Conditioning map for CDAN. Below the cap it is the flattened outer
/// product f_i (x) p_i; above it, (R_f f_i) * (R_g p_i) / sqrt(cap) with
/// Gaussian projections drawn once from `seed`.
class Multilinear {
 public:
  Multilinear(int feature_dim, int num_classes, int cap, std::uint64_t seed);

  bool randomized() const { return randomized_; }
  int out_dim() const { return out_dim_; }
  Matrix forward(const Matrix& features, const Matrix& probs) const;
  /// Gradient w.r.t. features; probabilities are treated as constants.
  Matrix backward_features(const Matrix& features, const Matrix& probs, const Matrix& grad_out) const;

 private:
  int feature_dim_;
  int num_classes_;
  int out_dim_;
  bool randomized_;
  Matrix rf_;  // cap x feature_dim
  Matrix rg_;  // cap x num_classes
};

Matrix cdan_multilinear(const Matrix& features, const Matrix& probs, int cap, std::uint64_t seed = 0);

/// Minimum class confusion on target logits at temperature T; grad is
/// w.r.t. the logits with entropy weights held constant.
/// Classes whose total predicted mass is below eps * n are left out.
ValueGrad mcc_loss_grad(const Matrix& logits, double temperature);
double mcc_loss(const Matrix& logits, double temperature);

/// mean_i -log(max(1 - p_i[h_i], eps)) for the adversarial head's logits.
ValueGrad mdd_target_disparity(const Matrix& aux_logits, std::span<const int> pseudo_labels);

/// normalize(p * (source_marginal / target_marginal)) row by row.
Matrix align_distribution(const Matrix& probs, const RowVector& source_marginal, const RowVector& target_marginal);

/// Ramp 1/2 - cos(min(pi, 2 pi t)) / 2 for progress t in [0, 1].
double adamatch_warmup(double progress);

/// Symmetric normalized-temperature contrastive loss over 2n embeddings
/// where rows i and i + n are the two views of sample i. Grad is w.r.t.
/// the raw (unnormalised) embeddings.
ValueGrad nt_xent(const Matrix& embeddings, double temperature);

}  // namespace udab

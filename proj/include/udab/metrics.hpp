#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "udab/tensor.hpp"

namespace udab {

struct DropMetrics {
  double sigma_st = 0.0;
  double abs_drop = 0.0;
};

/// sigma_st = 100 (s - t) / s and abs_drop = s - t. Any scale works as long
/// as both accuracies use it. Throws kDivisionDomain when s = 0.
DropMetrics relative_drop(double lambda_s, double lambda_t);

struct ProbeCurve {
  std::vector<double> fractions;
  std::vector<double> discriminator_accuracy;
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct ProbeOptions {
  double train_share = 0.8;
  int hidden = 64;
  int epochs = 30;
  int batch_size = 64;
  double learning_rate = 0.01;
  /// Randomly permute the domain labels; the probe should then sit at chance.
  bool shuffle_labels = false;
};

/// For each fraction: subsample the target rows at random, take an equal
/// number of source rows, then train a fresh 2-layer domain classifier on
/// 80% of the pooled rows and score it on the remaining 20%.
ProbeCurve domain_probe(const Matrix& source_features, const Matrix& target_features,
                        const std::vector<double>& fractions, std::uint64_t seed, const ProbeOptions& options = {});

/// Columns: fraction, accuracy, seed.
void write_probe_csv(const std::filesystem::path& path, const ProbeCurve& curve);
ProbeCurve read_probe_csv(const std::filesystem::path& path);

}  // namespace udab

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "udab/trainer.hpp"
#include "udab/zoo.hpp"

namespace udab {

enum class PretextMode { kSupervised, kContrastive };
std::string_view to_string(PretextMode mode);
PretextMode parse_pretext_mode(std::string_view name);

struct PretextSpec {
  /// Two-domain corpus; the train splits of both domains are pooled.
  DatasetRef corpus;
  int budget = 2000;
  /// Class ids shared with the downstream task; removed before budgeting.
  std::set<int> exclude_classes;
  PretextMode mode = PretextMode::kSupervised;
  int epochs = 5;
  int batch_size = 32;
  double learning_rate = 0.01;
  /// Contrastive only.
  double temperature = 0.5;
  bool projection_head = true;
  std::uint64_t seed = 0;
};

struct PretextManifest {
  int budget = 0;
  std::set<int> excluded;
  std::vector<int> retained;
  std::map<int, std::size_t> per_class;
  std::size_t actual_size = 0;
  std::string mode;
};

/// Drops excluded classes, then keeps floor(budget / kept classes) random
/// samples per remaining class, or all of them when a class has fewer.
/// Throws kEmptyPretext when nothing survives the exclusion.
LabeledSet build_pretext_subset(const LabeledSet& set, int budget, const std::set<int>& exclude_classes,
                                std::uint64_t seed, PretextManifest* manifest = nullptr);

/// Pooled train splits of the corpus, tagged as source.
LabeledSet pretext_corpus(const PretextSpec& spec);

struct PretrainResult {
  /// Backbone parameters only.
  Checkpoint checkpoint;
  std::vector<double> epoch_loss;
  /// Supervised mode: accuracy of backbone + temporary head on the subset.
  double train_accuracy = 0.0;
  PretextManifest manifest;
};

/// Cross-entropy training of backbone plus a throwaway head.
PretrainResult supervised_pretrain(const PretextSpec& spec, const ArchSpec& arch);
PretrainResult supervised_pretrain(const LabeledSet& subset, const PretextSpec& spec, const ArchSpec& arch);

/// Two augmented views per sample with a symmetric NT-Xent loss; never reads
/// labels after budgeting. Throws kTooSmallBatch below 4 samples per batch.
PretrainResult contrastive_pretrain(const PretextSpec& spec, const ArchSpec& arch);
PretrainResult contrastive_pretrain(const LabeledSet& subset, const PretextSpec& spec, const ArchSpec& arch);

/// Dispatches on spec.mode.
PretrainResult run_pretrain(const PretextSpec& spec, const ArchSpec& arch);

/// Checkpoint plus a `pretext` manifest next to it.
void save_pretrain(const std::filesystem::path& dir, const PretrainResult& result);

}  // namespace udab

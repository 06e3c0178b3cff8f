#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "udab/data.hpp"
#include "udab/methods.hpp"
#include "udab/zoo.hpp"

namespace udab {

/// Either a dataset directory written by generate-data or an in-memory
/// synthetic spec.
struct DatasetRef {
  std::string path;
  SyntheticSpec synthetic = default_synthetic_spec();

  static SyntheticSpec default_synthetic_spec();
};

enum class OptimizerKind { kSgd, kAdam };
std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view name);

enum class LrSchedule { kConstant, kCosine };
std::string_view to_string(LrSchedule schedule);
LrSchedule parse_lr_schedule(std::string_view name);

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::kSgd;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  LrSchedule schedule = LrSchedule::kCosine;
};

/// kTargetTest reports the best target-test accuracy seen at any validation
/// (optimistic, off by default). kSourceValidation picks the validation step
/// with the best accuracy on a held-out slice of the source training data.
enum class EarlyStop { kOff, kTargetTest, kSourceValidation };
std::string_view to_string(EarlyStop mode);
EarlyStop parse_early_stop(std::string_view name);

inline constexpr double kSourceValidationShare = 0.1;

struct RunConfig {
  DatasetRef dataset;
  SamplingPlan target_sampling;
  SamplingPlan source_sampling;
  MethodConfig method;
  /// width 0 selects the family's default preset for the dataset input.
  ArchSpec arch{"mlp", 2, 0, 32};
  /// Checkpoint directory with backbone weights; empty for random init.
  std::string pretrain;
  std::uint64_t seed = 0;
  std::int64_t iterations = 2000;
  int batch_size = 32;
  OptimizerSpec optimizer;
  std::int64_t validate_every = 200;
  EarlyStop early_stop = EarlyStop::kOff;
};

/// Desk preset (the RunConfig defaults) and the larger-scale settings.
RunConfig desk_preset();
RunConfig full_scale_preset();
/// Throws ConfigError for an unknown preset name.
RunConfig preset_by_name(const std::string& name);

/// Accuracies are percentages; abs_drop = lambda_s - lambda_t in points.
struct MetricsRecord {
  double lambda_s = 0.0;
  double lambda_t = 0.0;
  double sigma_st = 0.0;
  double abs_drop = 0.0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

struct ValidationEntry {
  std::int64_t step = 0;
  double source_acc = 0.0;
  double target_acc = 0.0;
  /// Mean loss components over the steps since the previous entry.
  double total = 0.0;
  double ce_source = 0.0;
  double adaptation = 0.0;
  std::map<std::string, double> diagnostics;
};

struct RunRecord {
  std::string config_hash;
  std::uint64_t seed = 0;
  /// "ok" or "aborted".
  std::string status = "ok";
  std::string error;
  std::int64_t aborted_step = -1;
  MetricsRecord metrics;
  std::vector<ValidationEntry> log;
  double wall_seconds = 0.0;
  /// Resolved configuration, flattened to dotted keys.
  std::map<std::string, std::string> manifest;
  /// Free-form labels such as grid axis values.
  std::map<std::string, std::string> tags;
};

/// Fills method defaults and validates ranges; throws ConfigError.
RunConfig resolve_run_config(const RunConfig& config);
/// Dotted key -> canonical value text for every field of the config.
std::vector<std::pair<std::string, std::string>> flatten(const RunConfig& config);
/// 16 hex digits; pure function of the resolved config.
std::string config_hash(const RunConfig& config);

DatasetBundle load_dataset(const DatasetRef& ref);

/// Concrete backbone spec: width 0 resolves to the family preset.
ArchSpec resolve_arch(const ArchSpec& arch, const InputSpec& input);

/// Argmax accuracy in [0, 1]; ties go to the lowest class index.
double evaluate(const ModelAssembly& model, const LabeledSet& split);

/// 2 / (1 + exp(-10 p)) - 1; throws kRange outside [0, 1].
double grl_lambda_schedule(double progress);

/// Learning rate at `step` of `total` steps.
double scheduled_lr(const OptimizerSpec& spec, std::int64_t step, std::int64_t total);

/// Updates parameters from their accumulated gradients.
class Optimizer {
 public:
  Optimizer(OptimizerSpec spec, std::vector<nn::Parameter*> params);
  void step(double learning_rate);

 private:
  OptimizerSpec spec_;
  std::vector<nn::Parameter*> params_;
  std::vector<Matrix> first_;
  std::vector<Matrix> second_;
  std::int64_t t_ = 0;
};

/// Endless shuffled pass over [0, n); each epoch reshuffles with its own
/// derived seed.
class CyclicSampler {
 public:
  CyclicSampler(std::size_t n, std::uint64_t seed);
  std::vector<std::size_t> next(std::size_t count);
  std::int64_t epoch() const { return epoch_; }

 private:
  void reshuffle();
  std::size_t n_;
  std::uint64_t seed_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::int64_t epoch_ = -1;
};

struct TrainOptions {
  /// Use this bundle instead of loading config.dataset.
  const DatasetBundle* dataset = nullptr;
  /// Use these backbone weights instead of loading config.pretrain.
  const Checkpoint* pretrained = nullptr;
  /// If set, receives manifest, log.jsonl and the final checkpoint.
  std::filesystem::path run_dir;
  /// Filled with the trained model when non-null.
  ModelAssembly* model_out = nullptr;
};

/// One standardized training run. Throws AbortedRun when a loss turns
/// non-finite.
RunRecord train_run(const RunConfig& config, const TrainOptions& options = {});

/// Writes manifest and log.jsonl for a finished run.
void write_run_artifacts(const std::filesystem::path& dir, const RunRecord& record);

}  // namespace udab

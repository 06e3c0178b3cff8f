#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "udab/augment.hpp"
#include "udab/losses.hpp"
#include "udab/zoo.hpp"

namespace udab {

struct MethodConfig {
  std::string name = "source-only";
  /// Adaptation weight w; total = ce_source + w * adaptation.
  double weight = 1.0;
  std::map<std::string, double> params;

  friend bool operator==(const MethodConfig&, const MethodConfig&) = default;
};

struct LossBundle {
  double total = 0.0;
  double ce_source = 0.0;
  double adaptation = 0.0;
  std::map<std::string, double> diagnostics;

  bool finite() const;
};

/// Labelled source batch. Target batches are bare feature matrices, so no
/// loss below can see a target label.
struct SourceBatch {
  Matrix features;
  std::vector<int> labels;
};

struct StepContext {
  std::int64_t step = 0;
  /// Training progress in [0, 1].
  double progress = 0.0;
  /// Gradient reversal coefficient for this step.
  double grl_coeff = 1.0;
};

struct MethodContext {
  std::string data_mode = "vector";
  std::shared_ptr<const Augmenter> augmenter;
  std::uint64_t seed = 0;
};

/// One adaptation algorithm. step() runs forward and backward for a
/// source/target batch pair and adds d(total)/d(param) to the gradients of
/// every parameter in the assembly.
class Method {
 public:
  explicit Method(MethodConfig config) : config_(std::move(config)) {}
  virtual ~Method() = default;

  const MethodConfig& config() const { return config_; }
  /// Adds whatever heads the method needs (discriminator, auxiliary head).
  virtual void prepare(ModelAssembly& model) { (void)model; }
  virtual LossBundle step(ModelAssembly& model, const SourceBatch& source, const Matrix& target,
                          const StepContext& ctx) = 0;

 protected:
  double param(const std::string& key) const { return config_.params.at(key); }

 private:
  MethodConfig config_;
};

using MethodFactory = std::function<std::unique_ptr<Method>(const MethodConfig&, const MethodContext&)>;

struct MethodEntry {
  MethodFactory factory;
  std::map<std::string, double> defaults;
};

/// Name -> method. Built-ins are registered on first use; the registry is
/// meant to be extended only at startup.
class MethodRegistry {
 public:
  static MethodRegistry& instance();
  void add(const std::string& name, MethodEntry entry);
  bool contains(const std::string& name) const;
  const MethodEntry& get(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  MethodRegistry();
  std::map<std::string, MethodEntry> entries_;
};

/// Fills defaults and validates: unknown names throw kUnknownMethod,
/// unknown params or out-of-range values throw ConfigError.
MethodConfig resolve_method_config(const MethodConfig& config);
std::unique_ptr<Method> make_method(const MethodConfig& config, const MethodContext& context = {});

inline constexpr double kDefaultMccTemperature = 2.5;
inline constexpr double kDefaultMddMargin = 4.0;
/// MDD's reversal coefficient is the shared schedule times this factor.
inline constexpr double kDefaultMddGrlScale = 0.1;
inline constexpr double kDefaultConfidenceRatio = 0.9;
inline constexpr int kDefaultMultilinearCap = 1024;
inline constexpr double kMarginalEmaDecay = 0.9;

// The loss functions behind the methods. Each one runs forward and backward
// through `model`, accumulating gradients of (ce_source + weight * adaptation).

LossBundle source_only_loss(ModelAssembly& model, const SourceBatch& source);

/// Needs model.discriminator with input width feature_dim.
LossBundle dann_loss(ModelAssembly& model, const SourceBatch& source, const Matrix& target, double grl_coeff,
                     double weight = 1.0);

/// Needs model.discriminator with input width multilinear.out_dim().
LossBundle cdan_loss(ModelAssembly& model, const SourceBatch& source, const Matrix& target, double grl_coeff,
                     bool entropy_conditioning, const Multilinear& multilinear, double weight = 1.0);

LossBundle mcc_method_loss(ModelAssembly& model, const SourceBatch& source, const Matrix& target, double temperature,
                           double weight = 1.0);

/// Needs model.aux_head.
LossBundle mdd_loss(ModelAssembly& model, const SourceBatch& source, const Matrix& target, double margin,
                    double grl_coeff, double weight = 1.0);

/// Running class marginals for distribution alignment.
struct MarginalTracker {
  RowVector source;
  RowVector target;
  double decay = kMarginalEmaDecay;

  explicit MarginalTracker(int num_classes);
  void update(const RowVector& source_batch, const RowVector& target_batch);
};

struct PseudoLabels {
  std::vector<int> labels;
  std::vector<bool> mask;
  double threshold = 0.0;
  double mask_rate = 0.0;
};

/// Relative-confidence pseudo-labelling: threshold = ratio * mean max
/// source probability; a target row passes if its aligned max prob reaches it.
PseudoLabels adamatch_pseudo_labels(const Matrix& source_weak_probs, const Matrix& target_weak_probs,
                                    const MarginalTracker& marginals, double confidence_ratio);

LossBundle adamatch_loss(ModelAssembly& model, const SourceBatch& source, const Matrix& target,
                         const Augmenter& augmenter, Rng& rng, MarginalTracker& marginals, double confidence_ratio,
                         double progress, double weight = 1.0);

}  // namespace udab

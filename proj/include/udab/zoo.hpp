#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "udab/data.hpp"
#include "udab/nn.hpp"

namespace udab {

/// Backbone description. `width` means hidden units (mlp), channels (conv)
/// or token width (attention, mixer).
struct ArchSpec {
  std::string family = "mlp";
  int depth = 2;
  int width = 64;
  int feature_dim = 32;

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

struct InputSpec {
  int dim = 0;
  ImageShape shape;
  int num_classes = 0;
};

InputSpec input_spec_of(const DatasetBundle& bundle);

inline constexpr int kHeadHidden = 256;
inline constexpr int kDiscriminatorHidden = 256;
/// Backbone parameter budget the default presets are sized to.
inline constexpr std::size_t kPresetParameterBudget = 8000;

using BackboneFactory = std::function<nn::ModulePtr(const ArchSpec&, const InputSpec&, Rng&)>;

/// Name -> backbone constructor. The four built-in families are registered
/// on first use; extensions may be added at startup.
class ArchRegistry {
 public:
  static ArchRegistry& instance();
  void add(const std::string& family, BackboneFactory factory);
  bool contains(const std::string& family) const;
  const BackboneFactory& get(const std::string& family) const;
  std::vector<std::string> families() const;

 private:
  ArchRegistry();
  std::map<std::string, BackboneFactory> factories_;
};

/// Backbone, classifier head and the optional heads some methods need.
class ModelAssembly {
 public:
  ArchSpec arch;
  InputSpec input;
  std::uint64_t seed = 0;
  nn::ModulePtr backbone;
  nn::ModulePtr classifier;
  nn::ModulePtr aux_head;
  nn::ModulePtr discriminator;

  int feature_dim() const { return backbone->out_dim(); }
  std::vector<nn::Parameter*> parameters();
  std::vector<nn::Parameter*> backbone_parameters();
  std::vector<nn::Parameter*> classifier_parameters();
  std::size_t backbone_parameter_count();

  /// Same shape as the classifier; seeded independently of it.
  void add_aux_head();
  /// Two hidden layers of width 256, one logit.
  void add_discriminator(int input_dim);
};

/// Throws kUnknownArchitecture for unregistered families.
ModelAssembly build_backbone(const ArchSpec& spec, const InputSpec& input, std::uint64_t seed);

/// Depth and feature size per family, with width chosen so the backbone
/// lands as close as possible to kPresetParameterBudget for this input.
ArchSpec default_preset(const std::string& family, const InputSpec& input);

Matrix softmax(const Matrix& logits);
/// Class probabilities in evaluation mode.
Matrix predict(const ModelAssembly& model, const Matrix& batch);

/// Forward is the identity; use grad_reverse_backward on the way back.
Matrix grad_reverse(const Matrix& x, double coeff);
Matrix grad_reverse_backward(const Matrix& grad, double coeff);

/// Named parameter arrays plus provenance.
struct Checkpoint {
  ArchSpec arch;
  InputSpec input;
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  std::vector<std::pair<std::string, Matrix>> params;

  friend bool operator==(const Checkpoint& a, const Checkpoint& b);
};

/// Snapshot of every parameter whose name starts with `prefix`.
Checkpoint make_checkpoint(ModelAssembly& model, std::int64_t step, const std::string& prefix = "");
/// Copies matching parameters in; throws kShape on name or shape mismatch.
void load_into(ModelAssembly& model, const Checkpoint& ckpt);

/// Directory with `manifest` (text) and `params.bin` (headered arrays).
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Stable hex digest of parameter values; used to compare initialisations.
std::string parameter_digest(const std::vector<nn::Parameter*>& params);

}  // namespace udab

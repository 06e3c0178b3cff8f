#pragma once

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "udab/tensor.hpp"

namespace udab {

enum class Domain : int { kSource = 0, kTarget = 1 };

/// Who is asking for labels. Every label read goes through
/// LabeledSet::labels() and is counted per (domain, reader) so tests can
/// prove that target labels only reach samplers and evaluation.
enum class LabelReader : int {
  kSampler = 0,
  kEvaluation,
  kSourceTraining,
  kPretext,
  kIo,
  kCount,
};

std::string_view to_string(LabelReader reader);

class LabelAudit {
 public:
  static LabelAudit& instance();

  void record(Domain domain, LabelReader reader);
  std::uint64_t count(Domain domain, LabelReader reader) const;
  void reset();

 private:
  static constexpr std::size_t kReaders = static_cast<std::size_t>(LabelReader::kCount);
  std::array<std::atomic<std::uint64_t>, 2 * kReaders> counts_{};
};

/// Height x width x channels for tiny-image mode; all zero for vector mode.
struct ImageShape {
  int height = 0;
  int width = 0;
  int channels = 0;

  bool is_image() const { return height > 0 && width > 0 && channels > 0; }
  int size() const { return height * width * channels; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

/// n x d features plus integer labels for one split of one domain.
/// Image samples are stored flattened in (row, col, channel) order.
class LabeledSet {
 public:
  LabeledSet() = default;
  LabeledSet(Matrix features, std::vector<int> labels, Domain domain, ImageShape shape = {});

  const Matrix& features() const { return features_; }
  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  int dim() const { return static_cast<int>(features_.cols()); }
  Domain domain() const { return domain_; }
  const ImageShape& image_shape() const { return shape_; }

  /// Audited label access.
  std::span<const int> labels(LabelReader reader) const;

  /// Copy of the given rows, in the given order.
  LabeledSet select(std::span<const std::size_t> rows) const;
  /// Same rows with labels attached to a different domain tag.
  LabeledSet with_domain(Domain domain) const;

  friend bool operator==(const LabeledSet& a, const LabeledSet& b);

 private:
  Matrix features_;
  std::vector<int> labels_;
  Domain domain_ = Domain::kSource;
  ImageShape shape_;
};

enum class ShiftFamily { kRotation, kTranslation, kScaling, kClassMeanShift, kCorruptionNoise };

std::string_view to_string(ShiftFamily family);
ShiftFamily parse_shift_family(std::string_view name);

/// Source-to-target covariate shift. Units depend on the family: degrees
/// for rotation, feature units (or pixels) for translation and mean shift,
/// relative zoom for scaling, noise standard deviation for corruption.
struct ShiftSpec {
  ShiftFamily family = ShiftFamily::kRotation;
  double magnitude = 0.0;
  std::uint64_t seed = 0;
};

enum class DataMode { kVector, kImage };

/// Full description of a synthetic two-domain dataset.
struct SyntheticSpec {
  std::string name = "synthetic";
  int num_classes = 5;
  int samples_per_domain = 2000;
  int feature_dim = 2;
  ShiftSpec shift;
  std::uint64_t seed = 0;
  DataMode mode = DataMode::kVector;
  double train_ratio = 0.9;
  /// Standard deviation of class prototypes around the origin.
  double class_spread = 3.0;
  /// Within-class standard deviation.
  double within_class_std = 1.0;
};

struct DatasetBundle {
  std::string name;
  int num_classes = 0;
  LabeledSet source_train;
  LabeledSet source_test;
  LabeledSet target_train;
  LabeledSet target_test;
  SyntheticSpec provenance;

  /// Throws if any invariant (shared class vocabulary, finite features,
  /// labels in range) is violated.
  void validate() const;
};

/// Synthetic two-domain data; target = source distribution pushed through
/// the shift transform. Both domains get identical label counts.
DatasetBundle make_two_domain_synthetic(int num_classes, int samples_per_domain, int feature_dim,
                                        const ShiftSpec& shift, std::uint64_t seed);
DatasetBundle make_synthetic(const SyntheticSpec& spec);

/// Raw samples of one domain before splitting; exposed for pretext corpora.
LabeledSet sample_domain(const SyntheticSpec& spec, Domain domain);

// Index-level samplers. They take labels directly so they can be tested on
// plain count vectors; the LabeledSet overloads route through the audit.

/// floor(fraction * n) with a small tolerance so 0.29 * 100 gives 29.
std::size_t floor_fraction(double fraction, std::size_t n);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

SplitIndices train_test_split_indices(std::span<const int> labels, double train_ratio, std::uint64_t seed);
std::vector<std::size_t> stratified_indices(std::span<const int> labels, double fraction, std::uint64_t seed);
std::vector<std::size_t> random_indices(std::size_t n, double fraction, std::uint64_t seed);
/// `selected` receives the classes that were thinned, ascending.
std::vector<std::size_t> split_class_indices(std::span<const int> labels, double x_percent, std::uint64_t seed,
                                             std::vector<int>* selected = nullptr);

std::pair<LabeledSet, LabeledSet> make_train_test_split(const LabeledSet& set, double train_ratio,
                                                        std::uint64_t seed);
LabeledSet stratified_subsample(const LabeledSet& set, double fraction, std::uint64_t seed);
LabeledSet random_subsample(const LabeledSet& set, double fraction, std::uint64_t seed);
LabeledSet split_class_subsample(const LabeledSet& set, double x_percent, std::uint64_t seed);

enum class SamplingStrategy { kStratified, kRandom, kSplitClass };

std::string_view to_string(SamplingStrategy strategy);
SamplingStrategy parse_sampling_strategy(std::string_view name);

/// For split-class the fraction f is the overall share kept: removing 2x%
/// from half the classes removes x% overall, so x_percent = 100 * (1 - f).
/// That restricts split-class plans to f in [0.5, 1]; f = 1 is the identity.
struct SamplingPlan {
  SamplingStrategy strategy = SamplingStrategy::kStratified;
  double fraction = 1.0;
  std::uint64_t seed = 0;
};

inline constexpr std::array<double, 6> kStandardFractionGrid = {0.01, 0.05, 0.10, 0.25, 0.50, 1.00};

LabeledSet apply_sampling(const LabeledSet& set, const SamplingPlan& plan);

/// Per-class counts; reads labels as a sampler.
std::vector<std::size_t> class_counts(const LabeledSet& set, int num_classes);

}  // namespace udab

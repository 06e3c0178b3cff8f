#include "udab/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

#include "udab/error.hpp"
#include "udab/rng.hpp"

namespace udab {

std::string_view to_string(LabelReader reader) {
  switch (reader) {
    case LabelReader::kSampler: return "sampler";
    case LabelReader::kEvaluation: return "evaluation";
    case LabelReader::kSourceTraining: return "source-training";
    case LabelReader::kPretext: return "pretext";
    case LabelReader::kIo: return "io";
    case LabelReader::kCount: break;
  }
  return "unknown";
}

LabelAudit& LabelAudit::instance() {
  static LabelAudit audit;
  return audit;
}

void LabelAudit::record(Domain domain, LabelReader reader) {
  counts_[static_cast<std::size_t>(domain) * kReaders + static_cast<std::size_t>(reader)].fetch_add(
      1, std::memory_order_relaxed);
}

std::uint64_t LabelAudit::count(Domain domain, LabelReader reader) const {
  return counts_[static_cast<std::size_t>(domain) * kReaders + static_cast<std::size_t>(reader)].load(
      std::memory_order_relaxed);
}

void LabelAudit::reset() {
  for (auto& c : counts_) c.store(0, std::memory_order_relaxed);
}

LabeledSet::LabeledSet(Matrix features, std::vector<int> labels, Domain domain, ImageShape shape)
    : features_(std::move(features)), labels_(std::move(labels)), domain_(domain), shape_(shape) {
  if (static_cast<std::size_t>(features_.rows()) != labels_.size()) {
    throw Error(ErrorCode::kShape, "feature rows (" + std::to_string(features_.rows()) +
                                       ") != label count (" + std::to_string(labels_.size()) + ")");
  }
  if (shape_.is_image() && shape_.size() != features_.cols()) {
    throw Error(ErrorCode::kShape, "image shape does not match feature width");
  }
  if (!features_.allFinite()) throw Error(ErrorCode::kNumeric, "non-finite feature value");
}

std::span<const int> LabeledSet::labels(LabelReader reader) const {
  LabelAudit::instance().record(domain_, reader);
  return labels_;
}

LabeledSet LabeledSet::select(std::span<const std::size_t> rows) const {
  Matrix features(static_cast<Eigen::Index>(rows.size()), features_.cols());
  std::vector<int> labels(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    features.row(static_cast<Eigen::Index>(i)) = features_.row(static_cast<Eigen::Index>(rows[i]));
    labels[i] = labels_[rows[i]];
  }
  return LabeledSet(std::move(features), std::move(labels), domain_, shape_);
}

LabeledSet LabeledSet::with_domain(Domain domain) const {
  LabeledSet copy = *this;
  copy.domain_ = domain;
  return copy;
}

bool operator==(const LabeledSet& a, const LabeledSet& b) {
  return a.domain_ == b.domain_ && a.shape_ == b.shape_ && a.labels_ == b.labels_ &&
         a.features_.rows() == b.features_.rows() && a.features_.cols() == b.features_.cols() &&
         a.features_ == b.features_;
}

std::string_view to_string(ShiftFamily family) {
  switch (family) {
    case ShiftFamily::kRotation: return "rotation";
    case ShiftFamily::kTranslation: return "translation";
    case ShiftFamily::kScaling: return "scaling";
    case ShiftFamily::kClassMeanShift: return "class-conditional-mean-shift";
    case ShiftFamily::kCorruptionNoise: return "corruption-noise";
  }
  return "unknown";
}

ShiftFamily parse_shift_family(std::string_view name) {
  for (auto f : {ShiftFamily::kRotation, ShiftFamily::kTranslation, ShiftFamily::kScaling,
                 ShiftFamily::kClassMeanShift, ShiftFamily::kCorruptionNoise}) {
    if (to_string(f) == name) return f;
  }
  throw ConfigError("shift.family", "unknown shift family '" + std::string(name) + "'");
}

void DatasetBundle::validate() const {
  if (num_classes < 1) throw Error(ErrorCode::kPrecondition, "num_classes must be positive");
  const LabeledSet* sets[] = {&source_train, &source_test, &target_train, &target_test};
  const int dim = source_train.dim();
  for (const LabeledSet* set : sets) {
    if (set->dim() != dim) throw Error(ErrorCode::kShape, "splits disagree on feature width");
    for (const int y : set->labels(LabelReader::kIo)) {
      if (y < 0 || y >= num_classes) throw Error(ErrorCode::kRange, "label out of range");
    }
  }
}

namespace {

constexpr int kGlyphSide = 8;
constexpr int kGlyphBumps = 3;
constexpr double kGlyphCenter = 3.5;

struct Bump {
  double row;
  double col;
};

struct Prototypes {
  std::vector<Vector> means;               // vector mode
  std::vector<std::vector<Bump>> glyphs;   // image mode
  std::vector<Vector> mean_shift_dirs;     // unit directions for class-mean shift
};

Prototypes make_prototypes(const SyntheticSpec& spec, int dim) {
  Prototypes p;
  for (int c = 0; c < spec.num_classes; ++c) {
    Rng rng(derive_seed(spec.seed, "prototype", static_cast<std::uint64_t>(c)));
    if (spec.mode == DataMode::kVector) {
      Vector mean(dim);
      for (int j = 0; j < dim; ++j) mean(j) = rng.normal(0.0, spec.class_spread);
      p.means.push_back(std::move(mean));
    } else {
      std::vector<Bump> bumps;
      for (int b = 0; b < kGlyphBumps; ++b) bumps.push_back({rng.uniform(1.0, 6.0), rng.uniform(1.0, 6.0)});
      p.glyphs.push_back(std::move(bumps));
    }
    Rng shift_rng(derive_seed(spec.shift.seed, "mean-shift", static_cast<std::uint64_t>(c)));
    Vector dir(dim);
    for (int j = 0; j < dim; ++j) dir(j) = shift_rng.normal();
    dir /= std::max(dir.norm(), 1e-12);
    p.mean_shift_dirs.push_back(std::move(dir));
  }
  return p;
}

void rotate_pairs(Eigen::Ref<RowVector> x, double degrees) {
  const double theta = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  for (Eigen::Index j = 0; j + 1 < x.size(); j += 2) {
    const double a = x(j);
    const double b = x(j + 1);
    x(j) = c * a - s * b;
    x(j + 1) = s * a + c * b;
  }
}

RowVector sample_vector(const SyntheticSpec& spec, const Prototypes& p, int label, Domain domain, Rng& rng) {
  const int dim = spec.feature_dim;
  RowVector x(dim);
  for (int j = 0; j < dim; ++j) x(j) = p.means[label](j) + rng.normal(0.0, spec.within_class_std);
  if (domain == Domain::kSource) return x;
  const double m = spec.shift.magnitude;
  switch (spec.shift.family) {
    case ShiftFamily::kRotation: rotate_pairs(x, m); break;
    case ShiftFamily::kTranslation: x.array() += m / std::sqrt(static_cast<double>(dim)); break;
    case ShiftFamily::kScaling: x *= 1.0 + m; break;
    case ShiftFamily::kClassMeanShift: x += m * p.mean_shift_dirs[label].transpose(); break;
    case ShiftFamily::kCorruptionNoise:
      for (int j = 0; j < dim; ++j) x(j) += rng.normal(0.0, m);
      break;
  }
  return x;
}

RowVector sample_glyph(const SyntheticSpec& spec, const Prototypes& p, int label, Domain domain, Rng& rng) {
  const double amplitude = rng.uniform(0.8, 1.2);
  const double jitter_r = rng.uniform(-0.5, 0.5);
  const double jitter_c = rng.uniform(-0.5, 0.5);
  double sigma = 0.9;
  const double m = domain == Domain::kTarget ? spec.shift.magnitude : 0.0;
  const double theta = spec.shift.family == ShiftFamily::kRotation ? m * std::numbers::pi / 180.0 : 0.0;
  const double zoom = spec.shift.family == ShiftFamily::kScaling ? 1.0 + m : 1.0;
  const double dx = spec.shift.family == ShiftFamily::kTranslation ? m : 0.0;
  sigma *= zoom;

  std::vector<Bump> bumps;
  for (const Bump& b : p.glyphs[label]) {
    double r = b.row + jitter_r - kGlyphCenter;
    double c = b.col + jitter_c - kGlyphCenter;
    const double rr = std::cos(theta) * r - std::sin(theta) * c;
    const double cc = std::sin(theta) * r + std::cos(theta) * c;
    bumps.push_back({kGlyphCenter + zoom * rr, kGlyphCenter + zoom * cc + dx});
  }

  RowVector x(kGlyphSide * kGlyphSide);
  for (int r = 0; r < kGlyphSide; ++r) {
    for (int c = 0; c < kGlyphSide; ++c) {
      double v = 0.0;
      for (const Bump& b : bumps) {
        const double d2 = (r - b.row) * (r - b.row) + (c - b.col) * (c - b.col);
        v += std::exp(-d2 / (2.0 * sigma * sigma));
      }
      x(r * kGlyphSide + c) = amplitude * v + rng.normal(0.0, 0.05 * spec.within_class_std);
    }
  }
  if (m > 0.0 && spec.shift.family == ShiftFamily::kClassMeanShift) {
    x += m * p.mean_shift_dirs[label].transpose();
  } else if (m > 0.0 && spec.shift.family == ShiftFamily::kCorruptionNoise) {
    for (Eigen::Index j = 0; j < x.size(); ++j) x(j) += rng.normal(0.0, m);
  }
  return x;
}

}  // namespace

LabeledSet sample_domain(const SyntheticSpec& spec, Domain domain) {
  if (spec.num_classes < 2) throw Error(ErrorCode::kTooFewClasses, "need at least two classes");
  if (spec.samples_per_domain < spec.num_classes) {
    throw Error(ErrorCode::kInsufficientData, "samples_per_domain (" + std::to_string(spec.samples_per_domain) +
                                                  ") < num_classes (" + std::to_string(spec.num_classes) + ")");
  }
  if (spec.mode == DataMode::kVector && spec.feature_dim < 1) {
    throw Error(ErrorCode::kPrecondition, "feature_dim must be positive");
  }
  if (spec.shift.magnitude < 0.0) throw Error(ErrorCode::kPrecondition, "shift magnitude must be >= 0");

  const bool image = spec.mode == DataMode::kImage;
  const int dim = image ? kGlyphSide * kGlyphSide : spec.feature_dim;
  const ImageShape shape = image ? ImageShape{kGlyphSide, kGlyphSide, 1} : ImageShape{};
  const Prototypes protos = make_prototypes(spec, dim);

  Rng rng(derive_seed(spec.seed, domain == Domain::kSource ? "source-samples" : "target-samples"));
  const auto n = static_cast<Eigen::Index>(spec.samples_per_domain);
  Matrix features(n, dim);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % spec.num_classes);
    labels[static_cast<std::size_t>(i)] = y;
    features.row(i) = image ? sample_glyph(spec, protos, y, domain, rng) : sample_vector(spec, protos, y, domain, rng);
  }
  return LabeledSet(std::move(features), std::move(labels), domain, shape);
}

DatasetBundle make_synthetic(const SyntheticSpec& spec) {
  DatasetBundle bundle;
  bundle.name = spec.name;
  bundle.num_classes = spec.num_classes;
  bundle.provenance = spec;
  auto [src_train, src_test] =
      make_train_test_split(sample_domain(spec, Domain::kSource), spec.train_ratio, derive_seed(spec.seed, "split-source"));
  auto [tgt_train, tgt_test] =
      make_train_test_split(sample_domain(spec, Domain::kTarget), spec.train_ratio, derive_seed(spec.seed, "split-target"));
  bundle.source_train = std::move(src_train);
  bundle.source_test = std::move(src_test);
  bundle.target_train = std::move(tgt_train);
  bundle.target_test = std::move(tgt_test);
  return bundle;
}

DatasetBundle make_two_domain_synthetic(int num_classes, int samples_per_domain, int feature_dim,
                                        const ShiftSpec& shift, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.num_classes = num_classes;
  spec.samples_per_domain = samples_per_domain;
  spec.feature_dim = feature_dim;
  spec.shift = shift;
  spec.seed = seed;
  return make_synthetic(spec);
}

std::size_t floor_fraction(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

namespace {

/// Row indices grouped by class, classes ascending, rows ascending.
std::map<int, std::vector<std::size_t>> group_by_class(std::span<const int> labels) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  return groups;
}

void check_fraction(double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::kPrecondition, "fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
}

}  // namespace

SplitIndices train_test_split_indices(std::span<const int> labels, double train_ratio, std::uint64_t seed) {
  if (labels.empty()) throw Error(ErrorCode::kEmptyInput, "cannot split an empty set");
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) {
    throw Error(ErrorCode::kPrecondition, "train_ratio must lie in (0, 1)");
  }
  Rng rng(seed);
  SplitIndices out;
  for (auto& [label, rows] : group_by_class(labels)) {
    rng.shuffle(rows);
    const std::size_t n_train = rows.size() == 1 ? 1 : floor_fraction(train_ratio, rows.size());
    out.train.insert(out.train.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.test.insert(out.test.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_train), rows.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::vector<std::size_t> stratified_indices(std::span<const int> labels, double fraction, std::uint64_t seed) {
  check_fraction(fraction);
  Rng rng(seed);
  std::vector<std::size_t> kept;
  for (auto& [label, rows] : group_by_class(labels)) {
    const std::size_t k = std::max<std::size_t>(1, floor_fraction(fraction, rows.size()));
    for (const std::size_t pick : rng.sample_without_replacement(rows.size(), k)) kept.push_back(rows[pick]);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

std::vector<std::size_t> random_indices(std::size_t n, double fraction, std::uint64_t seed) {
  check_fraction(fraction);
  const std::size_t k = floor_fraction(fraction, n);
  if (k == 0) {
    throw Error(ErrorCode::kEmptySubset,
                "fraction " + std::to_string(fraction) + " of " + std::to_string(n) + " samples keeps nothing");
  }
  Rng rng(seed);
  auto kept = rng.sample_without_replacement(n, k);
  std::sort(kept.begin(), kept.end());
  return kept;
}

std::vector<std::size_t> split_class_indices(std::span<const int> labels, double x_percent, std::uint64_t seed,
                                             std::vector<int>* selected) {
  if (!(x_percent > 0.0 && x_percent <= 50.0)) {
    throw Error(ErrorCode::kPrecondition, "x_percent must lie in (0, 50]");
  }
  auto groups = group_by_class(labels);
  if (groups.size() < 2) throw Error(ErrorCode::kTooFewClasses, "split-class sampling needs at least two classes");

  // Class choice depends only on the seed, so it stays fixed across x.
  Rng class_rng(derive_seed(seed, "split-class-selection"));
  std::vector<int> classes;
  for (const auto& [label, rows] : groups) classes.push_back(label);
  std::vector<int> chosen;
  for (const std::size_t pick : class_rng.sample_without_replacement(classes.size(), classes.size() / 2)) {
    chosen.push_back(classes[pick]);
  }
  std::sort(chosen.begin(), chosen.end());
  if (selected != nullptr) *selected = chosen;

  Rng rng(derive_seed(seed, "split-class-rows"));
  const double keep_share = 1.0 - 2.0 * x_percent / 100.0;
  std::vector<std::size_t> kept;
  for (const auto& [label, rows] : groups) {
    if (!std::binary_search(chosen.begin(), chosen.end(), label)) {
      kept.insert(kept.end(), rows.begin(), rows.end());
      continue;
    }
    const std::size_t k = std::max<std::size_t>(1, floor_fraction(keep_share, rows.size()));
    for (const std::size_t pick : rng.sample_without_replacement(rows.size(), k)) kept.push_back(rows[pick]);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

std::pair<LabeledSet, LabeledSet> make_train_test_split(const LabeledSet& set, double train_ratio,
                                                        std::uint64_t seed) {
  const auto split = train_test_split_indices(set.labels(LabelReader::kSampler), train_ratio, seed);
  return {set.select(split.train), set.select(split.test)};
}

LabeledSet stratified_subsample(const LabeledSet& set, double fraction, std::uint64_t seed) {
  if (set.empty()) throw Error(ErrorCode::kEmptyInput, "cannot subsample an empty set");
  return set.select(stratified_indices(set.labels(LabelReader::kSampler), fraction, seed));
}

LabeledSet random_subsample(const LabeledSet& set, double fraction, std::uint64_t seed) {
  return set.select(random_indices(set.size(), fraction, seed));
}

LabeledSet split_class_subsample(const LabeledSet& set, double x_percent, std::uint64_t seed) {
  return set.select(split_class_indices(set.labels(LabelReader::kSampler), x_percent, seed));
}

std::string_view to_string(SamplingStrategy strategy) {
  switch (strategy) {
    case SamplingStrategy::kStratified: return "stratified";
    case SamplingStrategy::kRandom: return "random";
    case SamplingStrategy::kSplitClass: return "split-class";
  }
  return "unknown";
}

SamplingStrategy parse_sampling_strategy(std::string_view name) {
  for (auto s : {SamplingStrategy::kStratified, SamplingStrategy::kRandom, SamplingStrategy::kSplitClass}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("sampling.strategy", "unknown sampling strategy '" + std::string(name) + "'");
}

LabeledSet apply_sampling(const LabeledSet& set, const SamplingPlan& plan) {
  check_fraction(plan.fraction);
  if (plan.fraction == 1.0) return set;
  switch (plan.strategy) {
    case SamplingStrategy::kStratified: return stratified_subsample(set, plan.fraction, plan.seed);
    case SamplingStrategy::kRandom: return random_subsample(set, plan.fraction, plan.seed);
    case SamplingStrategy::kSplitClass: {
      const double x_percent = 100.0 * (1.0 - plan.fraction);
      if (x_percent > 50.0) {
        throw Error(ErrorCode::kPrecondition, "split-class plans need fraction >= 0.5");
      }
      return split_class_subsample(set, x_percent, plan.seed);
    }
  }
  return set;
}

std::vector<std::size_t> class_counts(const LabeledSet& set, int num_classes) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (const int y : set.labels(LabelReader::kSampler)) {
    if (y >= 0 && y < num_classes) ++counts[static_cast<std::size_t>(y)];
  }
  return counts;
}

}  // namespace udab

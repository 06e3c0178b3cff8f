#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "udab/data.hpp"
#include "udab/error.hpp"
#include "udab/io.hpp"

namespace udab {
namespace {

std::vector<int> labels_from_counts(const std::vector<int>& counts) {
  std::vector<int> labels;
  for (std::size_t c = 0; c < counts.size(); ++c) labels.insert(labels.end(), counts[c], static_cast<int>(c));
  return labels;
}

std::map<int, int> count_selected(const std::vector<int>& labels, const std::vector<std::size_t>& idx) {
  std::map<int, int> out;
  for (const std::size_t i : idx) ++out[labels[i]];
  return out;
}

SyntheticSpec rotation_spec() {
  SyntheticSpec spec;
  spec.num_classes = 5;
  spec.samples_per_domain = 1000;
  spec.feature_dim = 2;
  spec.shift = {ShiftFamily::kRotation, 45.0, 0};
  spec.seed = 0;
  return spec;
}

TEST(Synthetic, EqualClassCountsAcrossDomains) {
  const DatasetBundle b = make_synthetic(rotation_spec());
  const auto src = class_counts(b.source_train, 5);
  const auto tgt = class_counts(b.target_train, 5);
  EXPECT_EQ(src, tgt);
  EXPECT_EQ(class_counts(b.source_test, 5), class_counts(b.target_test, 5));
}

TEST(Synthetic, ZeroShiftDomainsHaveEqualMeans) {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.samples_per_domain = 300;
  spec.feature_dim = 2;
  spec.shift = {ShiftFamily::kRotation, 0.0, 0};
  spec.seed = 7;
  const LabeledSet s = sample_domain(spec, Domain::kSource);
  const LabeledSet t = sample_domain(spec, Domain::kTarget);
  EXPECT_FALSE(s.features() == t.features());
  // Welch t statistic per coordinate; two-sided critical value at 0.01.
  for (int j = 0; j < 2; ++j) {
    const auto a = s.features().col(j).array();
    const auto b = t.features().col(j).array();
    const double ma = a.mean(), mb = b.mean();
    const double va = (a - ma).square().sum() / (a.size() - 1);
    const double vb = (b - mb).square().sum() / (b.size() - 1);
    const double stat = (ma - mb) / std::sqrt(va / a.size() + vb / b.size());
    EXPECT_LT(std::abs(stat), 2.576) << "coordinate " << j;
  }
}

TEST(Synthetic, Deterministic) {
  const DatasetBundle a = make_synthetic(rotation_spec());
  const DatasetBundle b = make_synthetic(rotation_spec());
  EXPECT_TRUE(a.source_train == b.source_train);
  EXPECT_TRUE(a.target_test == b.target_test);
}

TEST(Synthetic, SourceIgnoresShift) {
  SyntheticSpec spec = rotation_spec();
  const LabeledSet s = sample_domain(spec, Domain::kSource);
  spec.shift.magnitude = 0.0;
  const LabeledSet s0 = sample_domain(spec, Domain::kSource);
  EXPECT_TRUE(s.features() == s0.features());
}

TEST(Synthetic, RejectsBadSpecs) {
  SyntheticSpec spec = rotation_spec();
  spec.num_classes = 1;
  EXPECT_THROW(make_synthetic(spec), Error);
  spec = rotation_spec();
  spec.samples_per_domain = 3;
  EXPECT_THROW(make_synthetic(spec), Error);
}

TEST(Synthetic, ImageModeShape) {
  SyntheticSpec spec = rotation_spec();
  spec.mode = DataMode::kImage;
  spec.samples_per_domain = 100;
  spec.shift = {ShiftFamily::kTranslation, 1.0, 0};
  const DatasetBundle b = make_synthetic(spec);
  ASSERT_TRUE(b.source_train.image_shape().is_image());
  EXPECT_EQ(b.source_train.dim(), b.source_train.image_shape().size());
}

TEST(Split, TenPerClass) {
  const auto labels = labels_from_counts(std::vector<int>(10, 10));
  const SplitIndices s = train_test_split_indices(labels, 0.9, 3);
  EXPECT_EQ(s.train.size(), 90u);
  EXPECT_EQ(s.test.size(), 10u);
  for (const auto& [c, n] : count_selected(labels, s.test)) EXPECT_EQ(n, 1) << "class " << c;
}

TEST(Split, SingletonClassGoesToTrain) {
  const auto labels = labels_from_counts({10, 1});
  const SplitIndices s = train_test_split_indices(labels, 0.9, 0);
  EXPECT_EQ(count_selected(labels, s.train)[1], 1);
  EXPECT_EQ(count_selected(labels, s.test).count(1), 0u);
}

TEST(Split, Deterministic) {
  const auto labels = labels_from_counts({30, 20, 7});
  const SplitIndices a = train_test_split_indices(labels, 0.8, 11);
  const SplitIndices b = train_test_split_indices(labels, 0.8, 11);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
}

TEST(Stratified, FloorWithMinimumOne) {
  const auto labels = labels_from_counts({10, 4, 1});
  auto c = count_selected(labels, stratified_indices(labels, 0.25, 0));
  EXPECT_EQ(c[0], 2);
  EXPECT_EQ(c[1], 1);
  EXPECT_EQ(c[2], 1);
  c = count_selected(labels, stratified_indices(labels, 0.01, 0));
  EXPECT_EQ(c[0], 1);
  EXPECT_EQ(c[1], 1);
  EXPECT_EQ(c[2], 1);
}

TEST(Stratified, FullFractionIsIdentity) {
  const auto labels = labels_from_counts({10, 4, 1});
  auto idx = stratified_indices(labels, 1.0, 5);
  std::sort(idx.begin(), idx.end());
  ASSERT_EQ(idx.size(), labels.size());
  for (std::size_t i = 0; i < idx.size(); ++i) EXPECT_EQ(idx[i], i);
}

TEST(Stratified, RejectsBadFraction) {
  const auto labels = labels_from_counts({10});
  EXPECT_THROW(stratified_indices(labels, 0.0, 0), Error);
  EXPECT_THROW(stratified_indices(labels, 1.5, 0), Error);
}

TEST(Random, FloorSize) {
  EXPECT_EQ(random_indices(100, 0.5, 0).size(), 50u);
  auto all = random_indices(37, 1.0, 2);
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
  try {
    random_indices(10, 0.05, 0);
    FAIL() << "expected empty-subset";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptySubset);
  }
}

TEST(SplitClass, RemovesTwiceXFromHalfTheClasses) {
  const auto labels = labels_from_counts({10, 10, 10, 10});
  std::vector<int> selected;
  auto idx = split_class_indices(labels, 25.0, 4, &selected);
  ASSERT_EQ(selected.size(), 2u);
  auto c = count_selected(labels, idx);
  for (int k = 0; k < 4; ++k) {
    const bool thinned = std::find(selected.begin(), selected.end(), k) != selected.end();
    EXPECT_EQ(c[k], thinned ? 5 : 10) << "class " << k;
  }
  idx = split_class_indices(labels, 50.0, 4, &selected);
  c = count_selected(labels, idx);
  for (int k = 0; k < 4; ++k) {
    const bool thinned = std::find(selected.begin(), selected.end(), k) != selected.end();
    EXPECT_EQ(c[k], thinned ? 1 : 10);
  }
}

TEST(SplitClass, FiveClassesSelectTwo) {
  const auto labels = labels_from_counts({8, 8, 8, 8, 8});
  std::vector<int> selected;
  split_class_indices(labels, 10.0, 9, &selected);
  EXPECT_EQ(selected.size(), 2u);
}

TEST(Sampling, PlanDispatch) {
  const DatasetBundle b = make_synthetic(rotation_spec());
  const LabeledSet& t = b.target_train;
  EXPECT_EQ(apply_sampling(t, {SamplingStrategy::kRandom, 0.5, 1}).size(), floor_fraction(0.5, t.size()));
  EXPECT_EQ(apply_sampling(t, {SamplingStrategy::kStratified, 1.0, 1}).size(), t.size());
  EXPECT_THROW(apply_sampling(t, {SamplingStrategy::kSplitClass, 0.3, 1}), Error);
  EXPECT_EQ(parse_sampling_strategy("split-class"), SamplingStrategy::kSplitClass);
}

TEST(FloorFraction, ToleratesBinaryRounding) {
  EXPECT_EQ(floor_fraction(0.29, 100), 29u);
  EXPECT_EQ(floor_fraction(0.07, 100), 7u);
}

TEST(Io, DatasetRoundTrip) {
  SyntheticSpec spec = rotation_spec();
  spec.samples_per_domain = 50;
  const DatasetBundle b = make_synthetic(spec);
  const auto dir = std::filesystem::temp_directory_path() / "udab_io_roundtrip";
  std::filesystem::remove_all(dir);
  write_dataset(dir, b);
  const DatasetBundle r = read_dataset(dir);
  EXPECT_TRUE(r.source_train == b.source_train);
  EXPECT_TRUE(r.target_test == b.target_test);
  EXPECT_EQ(r.num_classes, b.num_classes);
  std::filesystem::remove_all(dir);
}

TEST(LabelAudit, CountsReaders) {
  LabelAudit::instance().reset();
  const DatasetBundle b = make_synthetic(rotation_spec());
  LabelAudit::instance().reset();
  (void)b.target_test.labels(LabelReader::kEvaluation);
  EXPECT_EQ(LabelAudit::instance().count(Domain::kTarget, LabelReader::kEvaluation), 1u);
  EXPECT_EQ(LabelAudit::instance().count(Domain::kTarget, LabelReader::kSourceTraining), 0u);
}

}  // namespace
}  // namespace udab

#include <gtest/gtest.h>

#include <cmath>

#include "udab/error.hpp"
#include "udab/io.hpp"
#include "udab/pretrain.hpp"

namespace udab {
namespace {

LabeledSet counted_set(const std::vector<int>& counts) {
  std::vector<int> labels;
  for (std::size_t c = 0; c < counts.size(); ++c) labels.insert(labels.end(), counts[c], static_cast<int>(c));
  Matrix x(static_cast<Eigen::Index>(labels.size()), 2);
  for (Eigen::Index i = 0; i < x.rows(); ++i) x.row(i) << static_cast<double>(i), labels[i];
  return LabeledSet(x, labels, Domain::kSource);
}

std::map<int, std::size_t> per_class(const LabeledSet& s) {
  std::map<int, std::size_t> out;
  for (const int y : s.labels(LabelReader::kSampler)) ++out[y];
  return out;
}

PretextSpec desk_pretext(std::uint64_t seed = 0) {
  PretextSpec p;
  p.corpus.synthetic.num_classes = 8;
  p.corpus.synthetic.samples_per_domain = 800;
  p.budget = 600;
  p.epochs = 5;
  p.seed = seed;
  return p;
}

const ArchSpec kArch{"mlp", 2, 0, 32};

TEST(PretextSubset, EqualQuota) {
  PretextManifest m;
  const LabeledSet s = build_pretext_subset(counted_set({100, 50, 10}), 30, {}, 0, &m);
  EXPECT_EQ(per_class(s), (std::map<int, std::size_t>{{0, 10}, {1, 10}, {2, 10}}));
  EXPECT_EQ(m.actual_size, 30u);
}

TEST(PretextSubset, ExclusionRemovesSharedClasses) {
  // Downstream {0, 1}; pretext classes {0, 2, 3}.
  const LabeledSet set = counted_set({20, 0, 20, 20});
  PretextManifest m;
  const LabeledSet s = build_pretext_subset(set, 40, {0, 1}, 0, &m);
  EXPECT_EQ(m.retained, (std::vector<int>{2, 3}));
  EXPECT_EQ(per_class(s).count(0), 0u);
}

TEST(PretextSubset, AvailabilityCap) {
  PretextManifest m;
  const LabeledSet s = build_pretext_subset(counted_set({100, 3}), 30, {}, 0, &m);
  EXPECT_EQ(per_class(s), (std::map<int, std::size_t>{{0, 15}, {1, 3}}));
  EXPECT_EQ(m.actual_size, 18u);
  EXPECT_EQ(m.budget, 30);
}

TEST(PretextSubset, EverythingExcluded) {
  try {
    build_pretext_subset(counted_set({5, 5}), 10, {0, 1}, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyPretext);
  }
}

TEST(Supervised, ZeroEpochsKeepsInitialisation) {
  PretextSpec p = desk_pretext();
  p.epochs = 0;
  const PretrainResult r = supervised_pretrain(p, kArch);
  const LabeledSet corpus = pretext_corpus(p);
  const InputSpec in{corpus.dim(), corpus.image_shape(), 8};
  ModelAssembly init = build_backbone(resolve_arch(kArch, in), in, p.seed);
  const Checkpoint expected = make_checkpoint(init, 0, "backbone.");
  ASSERT_EQ(r.checkpoint.params.size(), expected.params.size());
  for (std::size_t i = 0; i < expected.params.size(); ++i) {
    EXPECT_EQ(r.checkpoint.params[i].first, expected.params[i].first);
    EXPECT_TRUE(r.checkpoint.params[i].second == expected.params[i].second);
  }
}

TEST(Supervised, Deterministic) {
  const PretrainResult a = supervised_pretrain(desk_pretext(), kArch);
  const PretrainResult b = supervised_pretrain(desk_pretext(), kArch);
  EXPECT_TRUE(a.checkpoint == b.checkpoint);
}

TEST(Supervised, SeparablePretextIsLearned) {
  PretextSpec p = desk_pretext();
  p.corpus.synthetic.feature_dim = 8;
  p.corpus.synthetic.within_class_std = 0.4;
  p.corpus.synthetic.shift.magnitude = 0.0;
  const PretrainResult r = supervised_pretrain(p, kArch);
  EXPECT_GE(r.train_accuracy, 0.9);
  ASSERT_EQ(r.epoch_loss.size(), 5u);
  for (const auto& [name, value] : r.checkpoint.params) EXPECT_EQ(name.rfind("backbone.", 0), 0u);
}

TEST(Contrastive, RejectsTinyBatches) {
  PretextSpec p = desk_pretext();
  p.mode = PretextMode::kContrastive;
  p.batch_size = 1;
  try {
    contrastive_pretrain(p, kArch);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTooSmallBatch);
  }
}

TEST(Contrastive, LossDecreasesForMostSeeds) {
  int decreased = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    PretextSpec p = desk_pretext(seed);
    p.mode = PretextMode::kContrastive;
    p.batch_size = 64;
    const PretrainResult r = contrastive_pretrain(p, kArch);
    ASSERT_FALSE(r.epoch_loss.empty());
    decreased += r.epoch_loss.back() < r.epoch_loss.front();
  }
  EXPECT_GE(decreased, 2);
}

TEST(Contrastive, NeverReadsLabelsForTraining) {
  LabelAudit::instance().reset();
  PretextSpec p = desk_pretext();
  p.mode = PretextMode::kContrastive;
  p.epochs = 1;
  contrastive_pretrain(p, kArch);
  EXPECT_EQ(LabelAudit::instance().count(Domain::kSource, LabelReader::kPretext), 0u);
  EXPECT_EQ(LabelAudit::instance().count(Domain::kSource, LabelReader::kSourceTraining), 0u);
}

TEST(Pretrain, SaveWritesManifest) {
  PretextSpec p = desk_pretext();
  p.epochs = 1;
  const PretrainResult r = run_pretrain(p, kArch);
  const auto dir = std::filesystem::temp_directory_path() / "udab_pretrain_save";
  std::filesystem::remove_all(dir);
  save_pretrain(dir, r);
  EXPECT_TRUE(load_checkpoint(dir) == r.checkpoint);
  const KeyValues kv = read_key_values(dir / "pretext");
  EXPECT_EQ(kv.at("budget"), "600");
  EXPECT_EQ(kv.at("mode"), "supervised");
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace udab

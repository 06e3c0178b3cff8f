#include <gtest/gtest.h>

#include <cmath>

#include "udab/error.hpp"
#include "udab/zoo.hpp"

namespace udab {
namespace {

InputSpec vector_input() { return InputSpec{2, {}, 5}; }
InputSpec image_input() { return InputSpec{8 * 8 * 1, {8, 8, 1}, 5}; }

Matrix random_batch(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  Matrix x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = rng.normal();
  return x;
}

TEST(Zoo, SameSeedSameInit) {
  const ArchSpec spec = default_preset("mlp", vector_input());
  ModelAssembly a = build_backbone(spec, vector_input(), 0);
  ModelAssembly b = build_backbone(spec, vector_input(), 0);
  ModelAssembly c = build_backbone(spec, vector_input(), 1);
  EXPECT_EQ(parameter_digest(a.parameters()), parameter_digest(b.parameters()));
  EXPECT_NE(parameter_digest(a.parameters()), parameter_digest(c.parameters()));
}

TEST(Zoo, PresetsShareParameterBand) {
  for (const InputSpec& input : {vector_input(), image_input()}) {
    std::vector<double> counts;
    for (const std::string family : {"mlp", "conv", "attention", "mixer"}) {
      ModelAssembly m = build_backbone(default_preset(family, input), input, 0);
      counts.push_back(static_cast<double>(m.backbone_parameter_count()));
    }
    for (double a : counts)
      for (double b : counts) {
        EXPECT_GE(a / b, 0.75);
        EXPECT_LE(a / b, 1.25);
      }
  }
}

TEST(Zoo, UnknownFamily) {
  ArchSpec spec;
  spec.family = "resnet50";
  try {
    build_backbone(spec, vector_input(), 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownArchitecture);
  }
}

TEST(Zoo, ProbabilitiesNormalisedAndDeterministic) {
  const InputSpec in = image_input();
  for (const std::string family : {"mlp", "conv", "attention", "mixer"}) {
    ModelAssembly m = build_backbone(default_preset(family, in), in, 3);
    const Matrix x = random_batch(7, in.dim, 1);
    const Matrix p = predict(m, x);
    ASSERT_EQ(p.rows(), 7);
    for (int i = 0; i < 7; ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-6) << family;
    EXPECT_TRUE(p == predict(m, x)) << family;
  }
}

TEST(Zoo, WrongWidthIsShapeError) {
  ModelAssembly m = build_backbone(default_preset("mlp", vector_input()), vector_input(), 0);
  try {
    predict(m, random_batch(3, 4, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShape);
  }
}

TEST(GradReverse, Examples) {
  Matrix x(1, 2);
  x << 3.0, -1.0;
  EXPECT_TRUE(grad_reverse(x, 0.5) == x);
  Matrix g(1, 2);
  g << 1.0, -2.0;
  const Matrix back = grad_reverse_backward(g, 0.5);
  EXPECT_DOUBLE_EQ(back(0, 0), -0.5);
  EXPECT_DOUBLE_EQ(back(0, 1), 1.0);
  EXPECT_TRUE(grad_reverse_backward(g, 0.0).isZero());
}

// Backbone gradients against central differences, for every family.
TEST(Backprop, MatchesFiniteDifferences) {
  const InputSpec in{4 * 4 * 2, {4, 4, 2}, 3};
  for (const std::string family : {"mlp", "conv", "attention", "mixer"}) {
    ArchSpec spec{family, 1, 6, 8};
    ModelAssembly m = build_backbone(spec, in, 5);
    const Matrix x = random_batch(3, in.dim, 8);
    const Matrix w = random_batch(3, spec.feature_dim, 9);
    auto loss = [&](const Matrix& input) { return (m.backbone->forward(input, nullptr).array() * w.array()).sum(); };
    nn::Cache cache;
    m.backbone->forward(x, &cache);
    const Matrix grad = m.backbone->backward(w, cache);
    const double h = 1e-6;
    for (int i = 0; i < x.rows(); ++i)
      for (int j = 0; j < x.cols(); j += 5) {
        Matrix xp = x, xm = x;
        xp(i, j) += h;
        xm(i, j) -= h;
        const double fd = (loss(xp) - loss(xm)) / (2 * h);
        EXPECT_NEAR(grad(i, j), fd, 1e-5 * std::max(1.0, std::abs(fd))) << family << " " << i << "," << j;
      }
  }
}

TEST(Checkpoint, RoundTrip) {
  ModelAssembly m = build_backbone(default_preset("conv", image_input()), image_input(), 4);
  const Checkpoint ckpt = make_checkpoint(m, 17);
  const auto dir = std::filesystem::temp_directory_path() / "udab_ckpt_roundtrip";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, ckpt);
  EXPECT_TRUE(load_checkpoint(dir) == ckpt);
  ModelAssembly other = build_backbone(m.arch, m.input, 99);
  load_into(other, ckpt);
  EXPECT_EQ(parameter_digest(other.parameters()), parameter_digest(m.parameters()));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, BackbonePrefixOnly) {
  ModelAssembly m = build_backbone(default_preset("mlp", vector_input()), vector_input(), 0);
  const Checkpoint ckpt = make_checkpoint(m, 0, "backbone.");
  ASSERT_FALSE(ckpt.params.empty());
  for (const auto& [name, value] : ckpt.params) EXPECT_EQ(name.rfind("backbone.", 0), 0u) << name;
}

}  // namespace
}  // namespace udab

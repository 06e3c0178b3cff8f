#include <gtest/gtest.h>

#include <cmath>

#include "udab/error.hpp"
#include "udab/metrics.hpp"
#include "udab/rng.hpp"

namespace udab {
namespace {

Matrix gaussian(int n, int d, double mean, std::uint64_t seed) {
  Rng rng(seed);
  Matrix x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = rng.normal(mean, 1.0);
  return x;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

TEST(RelativeDrop, TableExamples) {
  DropMetrics m = relative_drop(81.86, 44.85);
  EXPECT_NEAR(m.sigma_st, 45.21, 0.01);
  EXPECT_NEAR(m.abs_drop, 37.01, 0.01);
  m = relative_drop(76.17, 72.56);
  EXPECT_NEAR(m.sigma_st, 4.74, 0.01);
  EXPECT_NEAR(m.abs_drop, 3.61, 0.01);
  m = relative_drop(60.0, 60.0);
  EXPECT_DOUBLE_EQ(m.sigma_st, 0.0);
  EXPECT_DOUBLE_EQ(m.abs_drop, 0.0);
}

TEST(RelativeDrop, Errors) {
  try {
    relative_drop(0.0, 10.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDivisionDomain);
  }
  EXPECT_THROW(relative_drop(std::nan(""), 1.0), Error);
}

TEST(Probe, SameDistributionIsChance) {
  const std::vector<double> fractions{0.25, 0.5, 1.0};
  const ProbeCurve c = domain_probe(gaussian(1000, 2, 0.0, 1), gaussian(1000, 2, 0.0, 2), fractions, 0);
  ASSERT_EQ(c.discriminator_accuracy.size(), 3u);
  for (double a : c.discriminator_accuracy) {
    EXPECT_GE(a, 0.45);
    EXPECT_LE(a, 0.55);
  }
}

TEST(Probe, DisjointSupportIsSeparable) {
  const ProbeCurve c = domain_probe(gaussian(500, 2, 0.0, 1), gaussian(500, 2, 100.0, 2), {0.1, 1.0}, 0);
  for (double a : c.discriminator_accuracy) EXPECT_GE(a, 0.99);
}

TEST(Probe, GaussianBayesRate) {
  const double bayes = normal_cdf(0.5);
  EXPECT_NEAR(bayes, 0.6915, 1e-4);
  const ProbeCurve c = domain_probe(gaussian(4000, 1, 0.0, 1), gaussian(4000, 1, 1.0, 2), {1.0}, 0);
  EXPECT_NEAR(c.discriminator_accuracy[0], bayes, 0.05);
}

TEST(Probe, ShuffledLabelsSitAtChance) {
  ProbeOptions o;
  o.shuffle_labels = true;
  const ProbeCurve c = domain_probe(gaussian(800, 2, 0.0, 1), gaussian(800, 2, 3.0, 2), {1.0}, 0, o);
  EXPECT_NEAR(c.discriminator_accuracy[0], 0.5, 0.06);
}

TEST(Probe, RejectsBadFractions) {
  const Matrix a = gaussian(50, 2, 0.0, 1);
  EXPECT_THROW(domain_probe(a, a, {0.5, 0.25}, 0), Error);
  EXPECT_THROW(domain_probe(a, a, {0.0}, 0), Error);
  try {
    domain_probe(a, a, {0.01}, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptySubset);
  }
}

TEST(Probe, CsvRoundTrip) {
  ProbeCurve c;
  c.fractions = {0.05, 0.5, 1.0};
  c.discriminator_accuracy = {0.61, 0.7, 0.725};
  c.seed = 12;
  const auto path = std::filesystem::temp_directory_path() / "udab_probe.csv";
  write_probe_csv(path, c);
  const ProbeCurve r = read_probe_csv(path);
  EXPECT_EQ(r.fractions, c.fractions);
  EXPECT_EQ(r.seed, 12u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(r.discriminator_accuracy[i], c.discriminator_accuracy[i], 1e-9);
  std::filesystem::remove(path);
}

TEST(Probe, Deterministic) {
  const Matrix s = gaussian(300, 2, 0.0, 1), t = gaussian(300, 2, 1.0, 2);
  const ProbeCurve a = domain_probe(s, t, {0.5, 1.0}, 4);
  const ProbeCurve b = domain_probe(s, t, {0.5, 1.0}, 4);
  EXPECT_EQ(a.discriminator_accuracy, b.discriminator_accuracy);
}

}  // namespace
}  // namespace udab

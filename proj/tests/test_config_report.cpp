#include <gtest/gtest.h>

#include <cmath>

#include "udab/config.hpp"
#include "udab/error.hpp"
#include "udab/report.hpp"

namespace udab {
namespace {

RunRecord record(const std::string& method, const std::string& fraction, double ls, double lt, std::uint64_t seed) {
  RunRecord r;
  r.config_hash = method + fraction;
  r.seed = seed;
  r.metrics.lambda_s = ls;
  r.metrics.lambda_t = lt;
  r.metrics.abs_drop = ls - lt;
  r.metrics.sigma_st = 100.0 * (ls - lt) / ls;
  r.tags = {{"method", method}, {"target_fraction", fraction}, {"arch", "mlp"}, {"pretrain", ""}};
  r.manifest = {{"method.name", method}, {"arch.family", "mlp"}};
  return r;
}

std::string body_of(const std::vector<ReportFile>& files, const std::string& name) {
  for (const ReportFile& f : files)
    if (f.name == name) return f.body;
  ADD_FAILURE() << "missing " << name;
  return {};
}

TEST(Config, EmptyFileIsDeskPreset) {
  EXPECT_TRUE(same_config(parse_run_config(""), resolve_run_config(desk_preset())));
}

TEST(Config, UnknownKeyIsNamed) {
  try {
    parse_run_config("metod:\n  name: dann\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "metod");
  }
  try {
    parse_run_config("method:\n  nme: dann\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "method.nme");
  }
}

TEST(Config, TypeMismatchCarriesPath) {
  try {
    parse_run_config("optimizer:\n  learning_rate: fast\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "optimizer.learning_rate");
  }
}

TEST(Config, UnknownMethodIsConfigError) {
  EXPECT_THROW(parse_run_config("method:\n  name: nope\n"), ConfigError);
}

TEST(Config, SerializeRoundTrip) {
  RunConfig c = desk_preset();
  c.method.name = "mdd";
  c.method.params["margin"] = 2.0;
  c.target_sampling.fraction = 0.25;
  c.arch = {"mixer", 3, 48, 16};
  c.seed = 11;
  const RunConfig back = parse_run_config(serialize(c));
  EXPECT_TRUE(same_config(back, resolve_run_config(c)));
  EXPECT_EQ(back.seed, 11u);
  EXPECT_EQ(serialize(back), serialize(resolve_run_config(c)));
}

TEST(Config, GridRoundTrip) {
  const std::string text =
      "iterations: 50\n"
      "axes:\n"
      "  methods: [dann, mcc]\n"
      "  target_fractions: [0.1, 1.0]\n"
      "  pretrain: [none]\n"
      "repeats: 3\n";
  const GridConfig g = parse_grid_config(text);
  EXPECT_EQ(g.axes.methods, (std::vector<std::string>{"dann", "mcc"}));
  EXPECT_EQ(g.axes.pretrain, (std::vector<std::string>{""}));
  EXPECT_EQ(g.repeats, 3);
  EXPECT_EQ(g.base.iterations, 50);
  const GridConfig back = parse_grid_config(serialize(g));
  EXPECT_EQ(back.axes, g.axes);
  EXPECT_EQ(back.repeats, 3);
  EXPECT_THROW(parse_grid_config("axes:\n  methods: []\n"), ConfigError);
  EXPECT_THROW(parse_grid_config("repeats: 0\n"), ConfigError);
}

TEST(Report, SingleRowArchTable) {
  ReportSpec spec;
  spec.kind = ReportKind::kArchRobustnessTable;
  const std::vector<ReportFile> files = render_report(spec, {record("dann", "1", 80.0, 60.0, 0)});
  ASSERT_EQ(files.size(), 1u);
  // sigma = (80 - 60) / 80 = 25%, absolute drop 20 points.
  EXPECT_NE(files[0].body.find("80.00,60.00,0.00,25.00,20.00"), std::string::npos) << files[0].body;
}

TEST(Report, OrderIndependentBytes) {
  std::vector<RunRecord> recs;
  for (std::uint64_t s = 0; s < 3; ++s) {
    recs.push_back(record("dann", "0.25", 90.0, 70.0 + s, s));
    recs.push_back(record("mcc", "1", 91.0, 75.0 - s, s));
  }
  for (const ReportKind kind : {ReportKind::kArchRobustnessTable, ReportKind::kFractionCurves}) {
    for (const ReportFormat fmt : {ReportFormat::kCsv, ReportFormat::kMarkdown}) {
      ReportSpec spec;
      spec.kind = kind;
      spec.format = fmt;
      std::vector<RunRecord> shuffled = recs;
      std::reverse(shuffled.begin(), shuffled.end());
      std::swap(shuffled[1], shuffled[4]);
      const auto a = render_report(spec, recs), b = render_report(spec, shuffled);
      ASSERT_EQ(a.size(), b.size());
      for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].body, b[i].body);
    }
  }
}

TEST(Report, SaturationStatistic) {
  const std::vector<ReportRow> rows = group_records(
      {record("dann", "0.25", 90.0, 60.0, 0), record("dann", "1", 90.0, 60.8, 0)}, {"method", "target_fraction"});
  EXPECT_NEAR(saturation_statistic(rows, "dann"), 0.8, 1e-9);
  EXPECT_TRUE(std::isnan(saturation_statistic(rows, "mcc")));

  ReportSpec spec;
  spec.kind = ReportKind::kFractionCurves;
  const auto files = render_report(spec, {record("dann", "0.25", 90.0, 60.0, 0), record("dann", "1", 90.0, 60.8, 0)});
  EXPECT_NE(body_of(files, "fraction-saturation.csv").find("dann,60.00,60.80,0.80"), std::string::npos);
}

TEST(Report, NumericKeyOrder) {
  const std::vector<ReportRow> rows = group_records(
      {record("a", "1", 90, 80, 0), record("a", "0.05", 90, 70, 0), record("a", "0.5", 90, 75, 0)},
      {"target_fraction"});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].keys[0], "0.05");
  EXPECT_EQ(rows[2].keys[0], "1");
}

TEST(Report, EmptyReport) {
  RunRecord aborted = record("dann", "1", 0, 0, 0);
  aborted.status = "aborted";
  for (const std::vector<RunRecord>& recs : {std::vector<RunRecord>{}, std::vector<RunRecord>{aborted}}) {
    try {
      render_report(ReportSpec{}, recs);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kEmptyReport);
    }
  }
}

TEST(Report, SvgOnlyForCurves) {
  ReportSpec spec;
  spec.format = ReportFormat::kSvg;
  EXPECT_THROW(render_report(spec, {record("dann", "1", 90, 80, 0)}), ConfigError);
  spec.kind = ReportKind::kFractionCurves;
  const auto files = render_report(spec, {record("dann", "1", 90, 80, 0), record("dann", "0.25", 90, 70, 0)});
  bool svg = false;
  for (const ReportFile& f : files) svg = svg || f.body.rfind("<svg", 0) == 0;
  EXPECT_TRUE(svg);
}

TEST(Report, UnknownGroupingKey) {
  ReportSpec spec;
  spec.grouping = {"colour"};
  EXPECT_THROW(render_report(spec, {record("dann", "1", 90, 80, 0)}), ConfigError);
}

TEST(Report, ManifestFallback) {
  RunRecord r = record("cdan", "1", 90, 80, 0);
  r.tags.clear();
  EXPECT_EQ(record_key(r, "method"), "cdan");
  EXPECT_EQ(record_key(r, "arch"), "mlp");
}

}  // namespace
}  // namespace udab

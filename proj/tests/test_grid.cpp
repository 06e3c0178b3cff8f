#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "udab/error.hpp"
#include "udab/grid.hpp"
#include "udab/records.hpp"

namespace udab {
namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

GridConfig tiny_grid() {
  GridConfig g;
  g.base.dataset.synthetic.samples_per_domain = 200;
  g.base.iterations = 20;
  g.base.validate_every = 20;
  g.base.seed = 3;
  g.axes.methods = {"source-only", "mcc"};
  g.axes.target_fractions = {0.5, 1.0};
  g.repeats = 2;
  return g;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Expand, CountsAndOrder) {
  GridConfig g;
  g.axes.methods = {"dann", "mcc"};
  g.axes.target_fractions = {0.1, 0.5, 1.0};
  g.repeats = 2;
  const std::vector<GridPoint> pts = expand_grid(g);
  ASSERT_EQ(pts.size(), 12u);
  EXPECT_EQ(pts.front().tags.at(kTagMethod), "dann");
  EXPECT_EQ(pts.back().tags.at(kTagMethod), "mcc");
  EXPECT_EQ(pts[0].tags.at(kTagRepeat), "0");
  EXPECT_EQ(pts[1].tags.at(kTagRepeat), "1");
  EXPECT_DOUBLE_EQ(pts[2].config.target_sampling.fraction, 0.5);
}

TEST(Expand, SingletonAxes) {
  const std::vector<GridPoint> pts = expand_grid(GridConfig{});
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_EQ(pts[0].config.method.name, "source-only");
}

TEST(Expand, EmptyAxisRejected) {
  GridConfig g;
  g.axes.archs.clear();
  try {
    expand_grid(g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyAxis);
  }
}

TEST(Expand, MethodsShareSeedsWithinCell) {
  const std::vector<GridPoint> pts = expand_grid(tiny_grid());
  std::map<std::string, std::set<std::uint64_t>> by_method;
  for (const GridPoint& p : pts) by_method[p.tags.at(kTagMethod)].insert(p.config.seed);
  EXPECT_EQ(by_method["source-only"], by_method["mcc"]);
  EXPECT_EQ(by_method["mcc"].size(), 4u);
}

TEST(Summarize, SampleStd) {
  const Stat one = summarize({5.0});
  EXPECT_DOUBLE_EQ(one.mean, 5.0);
  EXPECT_DOUBLE_EQ(one.std, 0.0);
  const Stat s = summarize({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.std, std::sqrt(5.0 / 3.0), 1e-12);
}

TEST(Store, TornLineIgnoredAndTruncated) {
  const fs::path dir = fresh_dir("udab_store_torn");
  RunRecord a;
  a.config_hash = "aaaa";
  a.metrics.lambda_t = 50.0;
  RunRecord b = a;
  b.config_hash = "bbbb";
  {
    ResultsStore s(dir / "r.jsonl");
    s.append(a);
  }
  {
    std::ofstream out(dir / "r.jsonl", std::ios::app);
    out << R"({"config_hash":"cc)";
  }
  ResultsStore s(dir / "r.jsonl");
  ASSERT_EQ(s.load().size(), 1u);
  s.append(b);
  const std::vector<RunRecord> back = read_results(dir / "r.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].config_hash, "bbbb");
  EXPECT_EQ(slurp(dir / "r.jsonl").find("\"cc"), std::string::npos);
}

TEST(Store, DuplicateAppendRejected) {
  const fs::path dir = fresh_dir("udab_store_dup");
  ResultsStore s(dir / "r.jsonl");
  RunRecord a;
  a.config_hash = "aaaa";
  s.append(a);
  EXPECT_TRUE(s.contains("aaaa", 0));
  try {
    s.append(a);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kPrecondition);
  }
}

TEST(Execute, SingleRepeatHasZeroStd) {
  GridConfig g = tiny_grid();
  g.repeats = 1;
  const fs::path dir = fresh_dir("udab_grid_single");
  ResultsStore store(dir / "r.jsonl");
  const GridSummary s = execute_and_aggregate(g, store);
  ASSERT_EQ(s.rows.size(), 4u);
  for (const AggregateRow& row : s.rows) {
    EXPECT_EQ(row.runs, 1);
    EXPECT_DOUBLE_EQ(row.lambda_t.std, 0.0);
    EXPECT_DOUBLE_EQ(row.lambda_s.std, 0.0);
  }
}

TEST(Execute, ParallelismDoesNotChangeAggregate) {
  const fs::path d1 = fresh_dir("udab_grid_p1"), d4 = fresh_dir("udab_grid_p4");
  ResultsStore s1(d1 / "r.jsonl"), s4(d4 / "r.jsonl");
  GridOptions o1, o4;
  o4.parallelism = 4;
  const GridSummary a = execute_and_aggregate(tiny_grid(), s1, o1);
  const GridSummary b = execute_and_aggregate(tiny_grid(), s4, o4);
  EXPECT_EQ(a.executed, 8u);
  EXPECT_EQ(aggregate_csv(a.rows), aggregate_csv(b.rows));
}

TEST(Execute, ResumeRunsOnlyMissingPoints) {
  const fs::path dir = fresh_dir("udab_grid_resume");
  ResultsStore store(dir / "r.jsonl");
  GridOptions partial;
  partial.max_new_runs = 3;
  const GridSummary first = execute_and_aggregate(tiny_grid(), store, partial);
  EXPECT_EQ(first.executed, 3u);
  const GridSummary second = execute_and_aggregate(tiny_grid(), store);
  EXPECT_EQ(second.executed, 5u);
  EXPECT_EQ(second.resumed, 3u);
  const GridSummary third = execute_and_aggregate(tiny_grid(), store);
  EXPECT_EQ(third.executed, 0u);
  EXPECT_EQ(third.planned, 8u);
  EXPECT_EQ(aggregate_csv(second.rows), aggregate_csv(third.rows));
  EXPECT_EQ(store.load().size(), 8u);
}

TEST(Aggregate, RecordOrderIrrelevant) {
  std::vector<RunRecord> recs;
  for (int i = 0; i < 4; ++i) {
    RunRecord r;
    r.config_hash = "h" + std::to_string(i % 2);
    r.seed = static_cast<std::uint64_t>(i);
    r.metrics = {90.0 - i, 70.0 + i, 0.0, 0.0};
    r.tags = {{kTagMethod, i % 2 ? "dann" : "mcc"}, {kTagRepeat, std::to_string(i / 2)}};
    recs.push_back(r);
  }
  const std::string forward = aggregate_csv(aggregate(recs));
  std::reverse(recs.begin(), recs.end());
  EXPECT_EQ(aggregate_csv(aggregate(recs)), forward);
  EXPECT_EQ(aggregate(recs).size(), 2u);
}

}  // namespace
}  // namespace udab

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "udab/trainer.hpp"

namespace udab {

/// Experiment axes. Every axis must be non-empty; an empty pretrain entry
/// means random initialisation.
struct GridAxes {
  std::vector<std::string> methods{"source-only"};
  std::vector<std::string> archs{"mlp"};
  std::vector<double> target_fractions{1.0};
  std::vector<double> source_fractions{1.0};
  std::vector<std::string> strategies{"stratified"};
  std::vector<std::string> pretrain{""};

  friend bool operator==(const GridAxes&, const GridAxes&) = default;
};

/// base.seed is the master seed.
struct GridConfig {
  RunConfig base;
  GridAxes axes;
  int repeats = 1;
};

/// Tag names written into RunRecord::tags for grid runs.
inline constexpr const char* kTagMethod = "method";
inline constexpr const char* kTagArch = "arch";
inline constexpr const char* kTagTargetFraction = "target_fraction";
inline constexpr const char* kTagSourceFraction = "source_fraction";
inline constexpr const char* kTagStrategy = "strategy";
inline constexpr const char* kTagPretrain = "pretrain";
inline constexpr const char* kTagRepeat = "repeat";

struct GridPoint {
  RunConfig config;
  /// Axis values (canonical text) plus the repeat index.
  std::map<std::string, std::string> tags;
};

/// Run seed for one grid cell. The method axis is left out on purpose so
/// that every method in a cell starts from the same initialisation and sees
/// the same batches.
std::uint64_t grid_run_seed(std::uint64_t master_seed, const std::map<std::string, std::string>& tags);

/// Cartesian product in axis order (methods, archs, target fractions,
/// source fractions, strategies, pretrain), repeats innermost. Throws
/// kEmptyAxis for an empty axis.
std::vector<GridPoint> expand_grid(const GridConfig& grid);

inline constexpr int kResultsSchemaVersion = 1;

/// Append-only JSONL file: a header line with the schema version, then one
/// RunRecord per line. A torn trailing line (no newline) is ignored by
/// readers and cut off before the next append.
class ResultsStore {
 public:
  explicit ResultsStore(std::filesystem::path path);

  const std::filesystem::path& path() const { return path_; }
  /// Complete records currently on disk.
  std::vector<RunRecord> load() const;
  bool contains(const std::string& config_hash, std::uint64_t seed) const;
  /// Throws kPrecondition on a duplicate (hash, seed).
  void append(const RunRecord& record);

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::set<std::pair<std::string, std::uint64_t>> keys_;
};

/// Reads any store file without creating it; a zero-byte file holds no records.
std::vector<RunRecord> read_results(const std::filesystem::path& path);

struct Stat {
  double mean = 0.0;
  /// Sample standard deviation (n - 1); 0 when n = 1.
  double std = 0.0;
};

Stat summarize(const std::vector<double>& values);

struct AggregateRow {
  std::map<std::string, std::string> keys;
  int runs = 0;
  int aborted = 0;
  Stat lambda_s;
  Stat lambda_t;
  Stat sigma_st;
  Stat abs_drop;
};

/// Groups completed records by every tag except the repeat index. Rows are
/// sorted by their keys, so the output does not depend on record order.
std::vector<AggregateRow> aggregate(const std::vector<RunRecord>& records);

/// Aggregate table as CSV with fixed formatting.
std::string aggregate_csv(const std::vector<AggregateRow>& rows);

struct GridOptions {
  int parallelism = 1;
  /// Stop scheduling after this many new runs (used to simulate interrupts).
  std::size_t max_new_runs = std::numeric_limits<std::size_t>::max();
  std::function<void(const RunRecord&)> on_record;
};

struct GridSummary {
  std::vector<AggregateRow> rows;
  std::size_t planned = 0;
  std::size_t executed = 0;
  std::size_t resumed = 0;
  /// (config hash, error) for runs that aborted.
  std::vector<std::pair<std::string, std::string>> aborted;
};

/// Runs every missing grid point, appends results to the store, and
/// aggregates the records that belong to this grid.
GridSummary execute_and_aggregate(const GridConfig& grid, ResultsStore& store, const GridOptions& options = {});

}  // namespace udab

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "udab/grid.hpp"
#include "udab/metrics.hpp"
#include "udab/trainer.hpp"

namespace udab {

enum class ReportKind { kArchRobustnessTable, kFractionCurves, kProbeCurve, kPretrainTable, kSourceVsTargetCurves };
std::string_view to_string(ReportKind kind);
ReportKind parse_report_kind(std::string_view name);

enum class ReportFormat { kCsv, kMarkdown, kSvg };
std::string_view to_string(ReportFormat format);
ReportFormat parse_report_format(std::string_view name);

struct ReportSpec {
  /// Results stores, or probe CSV files for probe-curve.
  std::vector<std::filesystem::path> inputs;
  ReportKind kind = ReportKind::kArchRobustnessTable;
  /// Empty means the kind's default keys.
  std::vector<std::string> grouping;
  ReportFormat format = ReportFormat::kCsv;
  std::filesystem::path out_dir = ".";
  /// Axis the fraction curves run along.
  std::string fraction_key = "target_fraction";
};

struct ReportFile {
  std::string name;
  std::string body;
};

/// Default grouping keys per kind.
std::vector<std::string> default_grouping(ReportKind kind, const std::string& fraction_key = "target_fraction");

/// Grouping value of a record: its tag if present, else the matching
/// manifest entry (method.name, arch.family, ...).
std::string record_key(const RunRecord& record, const std::string& key);

struct ReportRow {
  std::vector<std::string> keys;
  int runs = 0;
  Stat lambda_s;
  Stat lambda_t;
  Stat sigma_st;
  Stat abs_drop;
};

/// Completed records grouped by `keys`, rows in key order (numeric keys
/// compare as numbers). Throws kEmptyReport when nothing qualifies.
std::vector<ReportRow> group_records(const std::vector<RunRecord>& records, const std::vector<std::string>& keys);

/// lambda_t(1.0) - lambda_t(0.25) for one method; NaN if either is missing.
double saturation_statistic(const std::vector<ReportRow>& fraction_rows, const std::string& method);

/// Pure rendering; identical records in any order give identical bytes.
std::vector<ReportFile> render_report(const ReportSpec& spec, const std::vector<RunRecord>& records);
std::vector<ReportFile> render_probe_report(const ReportSpec& spec, const std::map<std::string, ProbeCurve>& curves);

/// Loads the inputs, renders, writes into spec.out_dir, returns the paths.
std::vector<std::filesystem::path> emit_report(const ReportSpec& spec);

}  // namespace udab

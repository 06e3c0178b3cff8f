#include "udab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "udab/error.hpp"

namespace udab {

std::string_view to_string(ReportKind kind) {
  switch (kind) {
    case ReportKind::kArchRobustnessTable: return "arch-robustness-table";
    case ReportKind::kFractionCurves: return "fraction-curves";
    case ReportKind::kProbeCurve: return "probe-curve";
    case ReportKind::kPretrainTable: return "pretrain-table";
    case ReportKind::kSourceVsTargetCurves: return "source-vs-target-curves";
  }
  return "";
}

ReportKind parse_report_kind(std::string_view name) {
  for (const ReportKind k : {ReportKind::kArchRobustnessTable, ReportKind::kFractionCurves, ReportKind::kProbeCurve,
                             ReportKind::kPretrainTable, ReportKind::kSourceVsTargetCurves}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("kind", "unknown report kind '" + std::string(name) + "'");
}

std::string_view to_string(ReportFormat format) {
  switch (format) {
    case ReportFormat::kCsv: return "csv";
    case ReportFormat::kMarkdown: return "markdown";
    case ReportFormat::kSvg: return "svg";
  }
  return "";
}

ReportFormat parse_report_format(std::string_view name) {
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "markdown" || name == "md") return ReportFormat::kMarkdown;
  if (name == "svg" || name == "svg-plot") return ReportFormat::kSvg;
  throw ConfigError("format", "unknown report format '" + std::string(name) + "'");
}

std::vector<std::string> default_grouping(ReportKind kind, const std::string& fraction_key) {
  switch (kind) {
    case ReportKind::kArchRobustnessTable: return {kTagArch, kTagMethod};
    case ReportKind::kFractionCurves: return {kTagMethod, fraction_key};
    case ReportKind::kPretrainTable: return {kTagPretrain, kTagMethod};
    case ReportKind::kSourceVsTargetCurves: return {kTagMethod, kTagSourceFraction, kTagTargetFraction};
    case ReportKind::kProbeCurve: return {};
  }
  return {};
}

namespace {

const std::map<std::string, std::string>& manifest_aliases() {
  static const std::map<std::string, std::string> aliases{
      {kTagMethod, "method.name"},
      {kTagArch, "arch.family"},
      {kTagTargetFraction, "target_sampling.fraction"},
      {kTagSourceFraction, "source_sampling.fraction"},
      {kTagStrategy, "target_sampling.strategy"},
      {kTagPretrain, "pretrain"},
  };
  return aliases;
}

bool known_key(const RunRecord& r, const std::string& key) {
  return r.tags.count(key) > 0 || manifest_aliases().count(key) > 0 || r.manifest.count(key) > 0;
}

/// Numbers compare numerically, everything else lexicographically.
bool key_less(const std::string& a, const std::string& b) {
  char* ea = nullptr;
  char* eb = nullptr;
  const double da = std::strtod(a.c_str(), &ea);
  const double db = std::strtod(b.c_str(), &eb);
  const bool na = !a.empty() && *ea == '\0';
  const bool nb = !b.empty() && *eb == '\0';
  if (na && nb && da != db) return da < db;
  if (na != nb) return na;
  return a < b;
}

bool keys_less(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    if (a[i] != b[i]) return key_less(a[i], b[i]);
  }
  return a.size() < b.size();
}

std::string fixed2(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  std::string s = buf;
  if (s == "-0.00") s = "0.00";
  return s;
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

std::string display(const std::string& key, const std::string& value) {
  if (key == kTagPretrain && value.empty()) return "none";
  return value;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string csv(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream out;
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << csv_field(header[i]);
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << csv_field(row[i]);
    out << '\n';
  }
  return out.str();
}

std::string markdown(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream out;
  out << '|';
  for (const auto& h : header) out << ' ' << h << " |";
  out << "\n|";
  for (std::size_t i = 0; i < header.size(); ++i) out << "---|";
  out << '\n';
  for (const auto& row : rows) {
    out << '|';
    for (const auto& cell : row) out << ' ' << cell << " |";
    out << '\n';
  }
  return out.str();
}

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> err;
};

std::string svg_escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string svg_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series, bool log_x) {
  constexpr double kW = 720, kH = 440, kLeft = 70, kRight = 190, kTop = 40, kBottom = 60;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2",
                                  "#7f7f7f", "#bcbd22", "#17becf"};
  double x_min = std::numeric_limits<double>::infinity(), x_max = -x_min;
  double y_min = x_min, y_max = -x_min;
  std::set<double> x_ticks;
  for (const Series& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double xv = log_x ? std::log10(s.x[i]) : s.x[i];
      x_min = std::min(x_min, xv);
      x_max = std::max(x_max, xv);
      const double e = s.err.empty() ? 0.0 : s.err[i];
      y_min = std::min(y_min, s.y[i] - e);
      y_max = std::max(y_max, s.y[i] + e);
      x_ticks.insert(s.x[i]);
    }
  }
  if (x_max == x_min) {
    x_min -= 1;
    x_max += 1;
  }
  y_min = std::floor(y_min / 5.0) * 5.0;
  y_max = std::ceil(y_max / 5.0) * 5.0;
  if (y_max <= y_min) y_max = y_min + 5.0;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](double x) { return kLeft + ((log_x ? std::log10(x) : x) - x_min) / (x_max - x_min) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - y_min) / (y_max - y_min)) * ph; };
  char buf[256];
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof(buf), "<text x=\"%.1f\" y=\"24\" font-size=\"15\">%s</text>\n", kLeft,
                svg_escape(title).c_str());
  out << buf;
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n"
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
                kLeft, kTop + ph, kLeft + pw, kTop + ph, kLeft, kTop, kLeft, kTop + ph);
  out << buf;
  const double y_step = (y_max - y_min) / 5.0;
  for (int i = 0; i <= 5; ++i) {
    const double yv = y_min + y_step * i;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#dddddd\"/>"
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%s</text>\n",
                  kLeft, py(yv), kLeft + pw, py(yv), kLeft - 6, py(yv) + 4, fixed2(yv).c_str());
    out << buf;
  }
  for (const double xv : x_ticks) {
    std::ostringstream label;
    label << xv;
    std::snprintf(buf, sizeof(buf), "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%s</text>\n", px(xv),
                  kTop + ph + 18, label.str().c_str());
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%s</text>\n", kLeft + pw / 2,
                kH - 16, svg_escape(x_label).c_str());
  out << buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"16\" y=\"%.1f\" text-anchor=\"middle\" transform=\"rotate(-90 16 %.1f)\">%s</text>\n",
                kTop + ph / 2, kTop + ph / 2, svg_escape(y_label).c_str());
  out << buf;
  for (std::size_t k = 0; k < series.size(); ++k) {
    const Series& s = series[k];
    const char* color = kColors[k % 10];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%s%.1f,%.1f", i ? " " : "", px(s.x[i]), py(s.y[i]));
      out << buf;
    }
    out << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!s.err.empty() && s.err[i] > 0.0) {
        std::snprintf(buf, sizeof(buf), "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\"/>\n",
                      px(s.x[i]), py(s.y[i] - s.err[i]), px(s.x[i]), py(s.y[i] + s.err[i]), color);
        out << buf;
      }
      std::snprintf(buf, sizeof(buf), "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"3\" fill=\"%s\"/>\n", px(s.x[i]),
                    py(s.y[i]), color);
      out << buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" stroke-width=\"2\"/>"
                  "<text x=\"%.1f\" y=\"%.1f\">%s</text>\n",
                  kLeft + pw + 14, kTop + 10 + 18.0 * k, kLeft + pw + 34, kTop + 10 + 18.0 * k, color,
                  kLeft + pw + 40, kTop + 14 + 18.0 * k, svg_escape(s.label).c_str());
    out << buf;
  }
  out << "</svg>\n";
  return out.str();
}

double as_number(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw ConfigError("grouping", "expected a numeric key value, got '" + s + "'");
  return v;
}

std::string join(const std::vector<std::string>& parts, std::size_t skip, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i == skip) continue;
    if (!out.empty()) out += sep;
    out += parts[i];
  }
  return out;
}

/// Series keyed by every grouping key except `x_index`, x from that key.
std::vector<Series> curves(const std::vector<ReportRow>& rows, const std::vector<std::string>& keys, std::size_t x_index) {
  std::map<std::string, Series> by_label;
  std::vector<std::string> order;
  for (const ReportRow& r : rows) {
    std::vector<std::string> shown;
    for (std::size_t i = 0; i < r.keys.size(); ++i) shown.push_back(display(keys[i], r.keys[i]));
    const std::string label = join(shown, x_index, " / ");
    if (by_label.count(label) == 0) order.push_back(label);
    Series& s = by_label[label];
    s.label = label;
    s.x.push_back(as_number(r.keys[x_index]));
    s.y.push_back(r.lambda_t.mean);
    s.err.push_back(r.lambda_t.std);
  }
  std::vector<Series> out;
  for (const std::string& l : order) out.push_back(by_label[l]);
  return out;
}

std::vector<ReportFile> table(const ReportSpec& spec, const std::string& name, const std::vector<std::string>& header,
                              const std::vector<std::vector<std::string>>& rows, const std::string& title) {
  if (spec.format == ReportFormat::kSvg) {
    throw ConfigError("format", "svg output is only available for curve reports");
  }
  if (spec.format == ReportFormat::kCsv) return {{name + ".csv", csv(header, rows)}};
  return {{name + ".md", "## " + title + "\n\n" + markdown(header, rows)}};
}

std::vector<ReportFile> arch_table(const ReportSpec& spec, const std::vector<ReportRow>& rows,
                                   const std::vector<std::string>& keys) {
  std::vector<std::string> header = keys;
  for (const char* h : {"runs", "lambda_s", "lambda_t", "lambda_t_std", "sigma_st", "abs_drop"}) header.push_back(h);
  std::vector<std::vector<std::string>> body;
  for (const ReportRow& r : rows) {
    // sigma_st and abs_drop come from the rounded lambda columns so every
    // printed row satisfies the formula against its own numbers.
    const double s = round2(r.lambda_s.mean);
    const double t = round2(r.lambda_t.mean);
    const double sigma = s > 0.0 ? relative_drop(s, t).sigma_st : std::numeric_limits<double>::quiet_NaN();
    const double drop = s - t;
    if (s > 0.0 && std::abs(round2(sigma) - 100.0 * (s - t) / s) > 0.005 + 1e-9) {
      throw Error(ErrorCode::kNumeric, "arch table row failed the relative-drop self-check");
    }
    std::vector<std::string> row;
    for (std::size_t i = 0; i < keys.size(); ++i) row.push_back(display(keys[i], r.keys[i]));
    row.push_back(std::to_string(r.runs));
    row.push_back(fixed2(s));
    row.push_back(fixed2(t));
    row.push_back(fixed2(r.lambda_t.std));
    row.push_back(fixed2(sigma));
    row.push_back(fixed2(drop));
    body.push_back(std::move(row));
  }
  return table(spec, "arch-robustness-table", header, body, "Architecture robustness");
}

std::vector<ReportFile> fraction_curves(const ReportSpec& spec, const std::vector<ReportRow>& rows,
                                        const std::vector<std::string>& keys) {
  const std::size_t x_index = keys.size() - 1;
  std::vector<std::string> header = keys;
  for (const char* h : {"runs", "lambda_t_mean", "lambda_t_std", "lambda_s_mean", "lambda_s_std"}) header.push_back(h);
  std::vector<std::vector<std::string>> body;
  for (const ReportRow& r : rows) {
    std::vector<std::string> row;
    for (std::size_t i = 0; i < keys.size(); ++i) row.push_back(display(keys[i], r.keys[i]));
    row.push_back(std::to_string(r.runs));
    row.push_back(fixed2(r.lambda_t.mean));
    row.push_back(fixed2(r.lambda_t.std));
    row.push_back(fixed2(r.lambda_s.mean));
    row.push_back(fixed2(r.lambda_s.std));
    body.push_back(std::move(row));
  }
  // Saturation: lambda_t at 1.0 minus lambda_t at 0.25, per series.
  std::vector<std::vector<std::string>> sat;
  std::map<std::string, std::pair<double, double>> ends;
  std::vector<std::string> order;
  for (const ReportRow& r : rows) {
    const std::string label = join(r.keys, x_index, "/");
    if (ends.count(label) == 0) {
      ends[label] = {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
      order.push_back(label);
    }
    const double x = as_number(r.keys[x_index]);
    if (std::abs(x - 0.25) < 1e-12) ends[label].first = r.lambda_t.mean;
    if (std::abs(x - 1.0) < 1e-12) ends[label].second = r.lambda_t.mean;
  }
  for (const std::string& label : order) {
    const auto [q, full] = ends[label];
    sat.push_back({label, fixed2(q), fixed2(full), fixed2(full - q)});
  }
  const std::vector<std::string> sat_header{join(keys, x_index, "/"), "lambda_t_at_0.25", "lambda_t_at_1",
                                            "saturation"};
  if (spec.format == ReportFormat::kSvg) {
    return {{"fraction-curves.svg", svg_chart("Target accuracy vs " + keys[x_index], keys[x_index],
                                              "target accuracy (%)", curves(rows, keys, x_index), true)}};
  }
  if (spec.format == ReportFormat::kCsv) {
    return {{"fraction-curves.csv", csv(header, body)}, {"fraction-saturation.csv", csv(sat_header, sat)}};
  }
  return {{"fraction-curves.md", "## Target accuracy vs " + keys[x_index] + "\n\n" + markdown(header, body) +
                                     "\n## Saturation (lambda_t at 1.0 minus lambda_t at 0.25)\n\n" +
                                     markdown(sat_header, sat)}};
}

std::vector<ReportFile> pretrain_table(const ReportSpec& spec, const std::vector<ReportRow>& rows,
                                       const std::vector<std::string>& keys) {
  std::vector<std::string> header = keys;
  for (const char* h : {"runs", "lambda_t_mean", "lambda_t_std", "lambda_s_mean"}) header.push_back(h);
  std::vector<std::vector<std::string>> body;
  for (const ReportRow& r : rows) {
    std::vector<std::string> row;
    for (std::size_t i = 0; i < keys.size(); ++i) row.push_back(display(keys[i], r.keys[i]));
    row.push_back(std::to_string(r.runs));
    row.push_back(fixed2(r.lambda_t.mean));
    row.push_back(fixed2(r.lambda_t.std));
    row.push_back(fixed2(r.lambda_s.mean));
    body.push_back(std::move(row));
  }
  if (spec.format != ReportFormat::kMarkdown || keys.size() != 2) {
    return table(spec, "pretrain-table", header, body, "Pretraining data");
  }
  // Markdown: pretext rows crossed with method columns.
  std::vector<std::string> cols;
  std::map<std::string, std::map<std::string, std::string>> cells;
  std::vector<std::string> row_order;
  for (const ReportRow& r : rows) {
    const std::string rk = display(keys[0], r.keys[0]);
    if (cells.count(rk) == 0) row_order.push_back(rk);
    if (std::find(cols.begin(), cols.end(), r.keys[1]) == cols.end()) cols.push_back(r.keys[1]);
    cells[rk][r.keys[1]] = fixed2(r.lambda_t.mean) + " ± " + fixed2(r.lambda_t.std);
  }
  std::sort(cols.begin(), cols.end(), key_less);
  std::vector<std::string> cross_header{keys[0]};
  cross_header.insert(cross_header.end(), cols.begin(), cols.end());
  std::vector<std::vector<std::string>> cross;
  for (const std::string& rk : row_order) {
    std::vector<std::string> row{rk};
    for (const std::string& c : cols) row.push_back(cells[rk].count(c) ? cells[rk][c] : "");
    cross.push_back(std::move(row));
  }
  return {{"pretrain-table.md", "## Target accuracy by pretraining data\n\n" + markdown(cross_header, cross)}};
}

std::vector<ReportFile> source_vs_target(const ReportSpec& spec, const std::vector<ReportRow>& rows,
                                         const std::vector<std::string>& keys) {
  std::vector<std::string> header = keys;
  for (const char* h : {"runs", "lambda_t_mean", "lambda_t_std", "lambda_s_mean", "lambda_s_std"}) header.push_back(h);
  std::vector<std::vector<std::string>> body;
  for (const ReportRow& r : rows) {
    std::vector<std::string> row;
    for (std::size_t i = 0; i < keys.size(); ++i) row.push_back(display(keys[i], r.keys[i]));
    row.push_back(std::to_string(r.runs));
    row.push_back(fixed2(r.lambda_t.mean));
    row.push_back(fixed2(r.lambda_t.std));
    row.push_back(fixed2(r.lambda_s.mean));
    row.push_back(fixed2(r.lambda_s.std));
    body.push_back(std::move(row));
  }
  if (spec.format == ReportFormat::kSvg) {
    return {{"source-vs-target-curves.svg",
             svg_chart("Target accuracy vs " + keys.back(), keys.back(), "target accuracy (%)",
                       curves(rows, keys, keys.size() - 1), true)}};
  }
  if (spec.format == ReportFormat::kCsv) return {{"source-vs-target-curves.csv", csv(header, body)}};
  return {{"source-vs-target-curves.md", "## Source labels vs target data\n\n" + markdown(header, body)}};
}

}  // namespace

std::string record_key(const RunRecord& record, const std::string& key) {
  if (auto it = record.tags.find(key); it != record.tags.end()) return it->second;
  if (auto alias = manifest_aliases().find(key); alias != manifest_aliases().end()) {
    if (auto it = record.manifest.find(alias->second); it != record.manifest.end()) return it->second;
  }
  if (auto it = record.manifest.find(key); it != record.manifest.end()) return it->second;
  return "";
}

std::vector<ReportRow> group_records(const std::vector<RunRecord>& records, const std::vector<std::string>& keys) {
  struct Acc {
    std::map<std::pair<std::uint64_t, std::string>, const RunRecord*> members;
  };
  std::map<std::vector<std::string>, Acc> groups;
  for (const RunRecord& r : records) {
    if (r.status != "ok") continue;
    std::vector<std::string> k;
    for (const std::string& key : keys) k.push_back(record_key(r, key));
    groups[k].members[{r.seed, r.config_hash}] = &r;
  }
  if (groups.empty()) throw Error(ErrorCode::kEmptyReport, "no completed runs to report");
  std::vector<ReportRow> rows;
  for (const auto& [k, acc] : groups) {
    ReportRow row;
    row.keys = k;
    std::vector<double> s, t, sigma, drop;
    for (const auto& [id, r] : acc.members) {
      s.push_back(r->metrics.lambda_s);
      t.push_back(r->metrics.lambda_t);
      sigma.push_back(r->metrics.sigma_st);
      drop.push_back(r->metrics.abs_drop);
    }
    row.runs = static_cast<int>(t.size());
    row.lambda_s = summarize(s);
    row.lambda_t = summarize(t);
    row.sigma_st = summarize(sigma);
    row.abs_drop = summarize(drop);
    rows.push_back(std::move(row));
  }
  std::sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) { return keys_less(a.keys, b.keys); });
  return rows;
}

double saturation_statistic(const std::vector<ReportRow>& rows, const std::string& method) {
  double q = std::numeric_limits<double>::quiet_NaN(), full = q;
  for (const ReportRow& r : rows) {
    if (r.keys.size() < 2 || r.keys.front() != method) continue;
    const double x = std::strtod(r.keys.back().c_str(), nullptr);
    if (std::abs(x - 0.25) < 1e-12) q = r.lambda_t.mean;
    if (std::abs(x - 1.0) < 1e-12) full = r.lambda_t.mean;
  }
  return full - q;
}

std::vector<ReportFile> render_report(const ReportSpec& spec, const std::vector<RunRecord>& records) {
  if (spec.kind == ReportKind::kProbeCurve) {
    throw ConfigError("kind", "probe-curve reports are rendered from probe CSV files");
  }
  const std::vector<std::string> keys =
      spec.grouping.empty() ? default_grouping(spec.kind, spec.fraction_key) : spec.grouping;
  if (keys.empty()) throw ConfigError("grouping", "at least one grouping key is required");
  if (!records.empty()) {
    for (const std::string& k : keys) {
      const bool found = std::any_of(records.begin(), records.end(), [&](const RunRecord& r) { return known_key(r, k); });
      if (!found) throw ConfigError("grouping", "key '" + k + "' does not occur in the store");
    }
  }
  const std::vector<ReportRow> rows = group_records(records, keys);
  switch (spec.kind) {
    case ReportKind::kArchRobustnessTable: return arch_table(spec, rows, keys);
    case ReportKind::kFractionCurves: return fraction_curves(spec, rows, keys);
    case ReportKind::kPretrainTable: return pretrain_table(spec, rows, keys);
    case ReportKind::kSourceVsTargetCurves: return source_vs_target(spec, rows, keys);
    case ReportKind::kProbeCurve: break;
  }
  return {};
}

std::vector<ReportFile> render_probe_report(const ReportSpec& spec, const std::map<std::string, ProbeCurve>& curves_in) {
  std::vector<std::vector<std::string>> body;
  std::vector<Series> series;
  for (const auto& [label, c] : curves_in) {
    Series s;
    s.label = label;
    for (std::size_t i = 0; i < c.fractions.size(); ++i) {
      char f[32], a[32];
      std::snprintf(f, sizeof(f), "%g", c.fractions[i]);
      std::snprintf(a, sizeof(a), "%.4f", c.discriminator_accuracy[i]);
      body.push_back({label, f, a, std::to_string(c.seed)});
      s.x.push_back(c.fractions[i]);
      s.y.push_back(100.0 * c.discriminator_accuracy[i]);
    }
    series.push_back(std::move(s));
  }
  if (body.empty()) throw Error(ErrorCode::kEmptyReport, "no probe points to report");
  const std::vector<std::string> header{"curve", "fraction", "accuracy", "seed"};
  switch (spec.format) {
    case ReportFormat::kCsv: return {{"probe-curve.csv", csv(header, body)}};
    case ReportFormat::kMarkdown:
      return {{"probe-curve.md", "## Domain discriminator accuracy vs target fraction\n\n" + markdown(header, body)}};
    case ReportFormat::kSvg:
      return {{"probe-curve.svg", svg_chart("Domain discriminator accuracy", "target fraction",
                                            "held-out accuracy (%)", series, true)}};
  }
  return {};
}

std::vector<std::filesystem::path> emit_report(const ReportSpec& spec) {
  if (spec.inputs.empty()) throw ConfigError("store", "no input files given");
  std::vector<ReportFile> files;
  if (spec.kind == ReportKind::kProbeCurve) {
    std::map<std::string, ProbeCurve> curves_in;
    for (const auto& p : spec.inputs) curves_in[p.stem().string()] = read_probe_csv(p);
    files = render_probe_report(spec, curves_in);
  } else {
    std::vector<RunRecord> records;
    for (const auto& p : spec.inputs) {
      if (!std::filesystem::exists(p)) throw ConfigError("store", "no such store " + p.string());
      for (RunRecord& r : read_results(p)) records.push_back(std::move(r));
    }
    files = render_report(spec, records);
  }
  std::filesystem::create_directories(spec.out_dir);
  std::vector<std::filesystem::path> written;
  for (const ReportFile& f : files) {
    const auto path = spec.out_dir / f.name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
    out << f.body;
    written.push_back(path);
  }
  return written;
}

}  // namespace udab

#include "udab/records.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "udab/error.hpp"
#include "udab/io.hpp"

namespace udab {

namespace {

using nlohmann::json;

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_of(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json entry_json(const ValidationEntry& e) {
  json diag = json::object();
  for (const auto& [k, v] : e.diagnostics) diag[k] = number(v);
  return json{{"step", e.step},
              {"source_acc", number(e.source_acc)},
              {"target_acc", number(e.target_acc)},
              {"total", number(e.total)},
              {"ce_source", number(e.ce_source)},
              {"adaptation", number(e.adaptation)},
              {"diagnostics", diag}};
}

ValidationEntry entry_from(const json& j) {
  ValidationEntry e;
  e.step = j.at("step").get<std::int64_t>();
  e.source_acc = number_of(j.at("source_acc"));
  e.target_acc = number_of(j.at("target_acc"));
  e.total = number_of(j.at("total"));
  e.ce_source = number_of(j.at("ce_source"));
  e.adaptation = number_of(j.at("adaptation"));
  for (const auto& [k, v] : j.at("diagnostics").items()) e.diagnostics[k] = number_of(v);
  return e;
}

}  // namespace

std::string to_json_line(const RunRecord& r) {
  json log = json::array();
  for (const ValidationEntry& e : r.log) log.push_back(entry_json(e));
  json j{{"config_hash", r.config_hash},
         {"seed", r.seed},
         {"status", r.status},
         {"error", r.error},
         {"aborted_step", r.aborted_step},
         {"metrics",
          {{"lambda_s", number(r.metrics.lambda_s)},
           {"lambda_t", number(r.metrics.lambda_t)},
           {"sigma_st", number(r.metrics.sigma_st)},
           {"abs_drop", number(r.metrics.abs_drop)}}},
         {"log", log},
         {"wall_seconds", number(r.wall_seconds)},
         {"manifest", r.manifest},
         {"tags", r.tags}};
  return j.dump();
}

RunRecord run_record_from_json(const std::string& line) {
  try {
    const json j = json::parse(line);
    RunRecord r;
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.status = j.at("status").get<std::string>();
    r.error = j.at("error").get<std::string>();
    r.aborted_step = j.at("aborted_step").get<std::int64_t>();
    const json& m = j.at("metrics");
    r.metrics.lambda_s = number_of(m.at("lambda_s"));
    r.metrics.lambda_t = number_of(m.at("lambda_t"));
    r.metrics.sigma_st = number_of(m.at("sigma_st"));
    r.metrics.abs_drop = number_of(m.at("abs_drop"));
    for (const json& e : j.at("log")) r.log.push_back(entry_from(e));
    r.wall_seconds = number_of(j.at("wall_seconds"));
    r.manifest = j.at("manifest").get<std::map<std::string, std::string>>();
    if (j.contains("tags")) r.tags = j.at("tags").get<std::map<std::string, std::string>>();
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kIo, std::string("malformed run record: ") + e.what());
  }
}

void write_run_artifacts(const std::filesystem::path& dir, const RunRecord& record) {
  std::filesystem::create_directories(dir);
  KeyValues manifest(record.manifest.begin(), record.manifest.end());
  manifest["config_hash"] = record.config_hash;
  manifest["status"] = record.status;
  write_key_values(dir / "manifest", manifest);
  std::ofstream log(dir / "log.jsonl");
  if (!log) throw Error(ErrorCode::kIo, "cannot write " + (dir / "log.jsonl").string());
  for (const ValidationEntry& e : record.log) log << entry_json(e).dump() << '\n';
}

}  // namespace udab

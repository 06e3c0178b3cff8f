#include "udab/grid.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "udab/error.hpp"
#include "udab/records.hpp"
#include "udab/rng.hpp"

namespace udab {

namespace {

std::string fraction_text(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, end);
}

template <typename T>
void require_axis(const std::vector<T>& axis, const char* name) {
  if (axis.empty()) throw Error(ErrorCode::kEmptyAxis, std::string("grid axis '") + name + "' is empty");
}

}  // namespace

std::uint64_t grid_run_seed(std::uint64_t master_seed, const std::map<std::string, std::string>& tags) {
  std::string text;
  for (const auto& [k, v] : tags) {
    if (k == kTagMethod) continue;
    text += k + '=' + v + ';';
  }
  return derive_seed(master_seed, text);
}

std::vector<GridPoint> expand_grid(const GridConfig& grid) {
  const GridAxes& a = grid.axes;
  require_axis(a.methods, "methods");
  require_axis(a.archs, "archs");
  require_axis(a.target_fractions, "target_fractions");
  require_axis(a.source_fractions, "source_fractions");
  require_axis(a.strategies, "strategies");
  require_axis(a.pretrain, "pretrain");
  if (grid.repeats < 1) throw ConfigError("repeats", "must be >= 1");

  std::vector<GridPoint> points;
  for (const std::string& method : a.methods) {
    for (const std::string& arch : a.archs) {
      for (const double tf : a.target_fractions) {
        for (const double sf : a.source_fractions) {
          for (const std::string& strategy : a.strategies) {
            for (const std::string& pretrain : a.pretrain) {
              for (int r = 0; r < grid.repeats; ++r) {
                GridPoint p;
                p.config = grid.base;
                p.config.method.name = method;
                p.config.arch.family = arch;
                p.config.target_sampling.strategy = parse_sampling_strategy(strategy);
                p.config.target_sampling.fraction = tf;
                p.config.source_sampling.strategy = parse_sampling_strategy(strategy);
                p.config.source_sampling.fraction = sf;
                p.config.pretrain = pretrain;
                p.tags[kTagMethod] = method;
                p.tags[kTagArch] = arch;
                p.tags[kTagTargetFraction] = fraction_text(tf);
                p.tags[kTagSourceFraction] = fraction_text(sf);
                p.tags[kTagStrategy] = strategy;
                p.tags[kTagPretrain] = pretrain;
                p.tags[kTagRepeat] = std::to_string(r);
                p.config.seed = grid_run_seed(grid.base.seed, p.tags);
                points.push_back(std::move(p));
              }
            }
          }
        }
      }
    }
  }
  return points;
}

namespace {

std::string header_line() {
  return nlohmann::json{{"schema", "udab-results"}, {"version", kResultsSchemaVersion}}.dump();
}

/// Complete lines only; a trailing fragment without '\n' is dropped.
std::vector<std::string> complete_lines(const std::filesystem::path& path, std::uintmax_t* complete_bytes = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (true) {
    const std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) break;
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  if (complete_bytes != nullptr) *complete_bytes = start;
  return lines;
}

void check_header(const std::vector<std::string>& lines, const std::filesystem::path& path) {
  if (lines.empty()) throw Error(ErrorCode::kIo, path.string() + ": missing results header");
  try {
    const auto j = nlohmann::json::parse(lines.front());
    if (j.at("schema") != "udab-results") throw Error(ErrorCode::kIo, path.string() + ": not a results store");
    if (j.at("version").get<int>() != kResultsSchemaVersion) {
      throw Error(ErrorCode::kIo, path.string() + ": unsupported schema version");
    }
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::kIo, path.string() + ": malformed results header");
  }
}

std::vector<RunRecord> parse_records(const std::vector<std::string>& lines) {
  std::vector<RunRecord> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    out.push_back(run_record_from_json(lines[i]));
  }
  return out;
}

}  // namespace

std::vector<RunRecord> read_results(const std::filesystem::path& path) {
  // A zero-byte file is a store that never got its header written.
  if (std::filesystem::exists(path) && std::filesystem::file_size(path) == 0) return {};
  const auto lines = complete_lines(path);
  check_header(lines, path);
  return parse_records(lines);
}

ResultsStore::ResultsStore(std::filesystem::path path) : path_(std::move(path)) {
  if (!std::filesystem::exists(path_) || std::filesystem::file_size(path_) == 0) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot create " + path_.string());
    out << header_line() << '\n';
    return;
  }
  std::uintmax_t complete = 0;
  const auto lines = complete_lines(path_, &complete);
  check_header(lines, path_);
  // Cut a torn trailing record so the next append starts on a fresh line.
  if (complete < std::filesystem::file_size(path_)) std::filesystem::resize_file(path_, complete);
  for (const RunRecord& r : parse_records(lines)) keys_.emplace(r.config_hash, r.seed);
}

std::vector<RunRecord> ResultsStore::load() const {
  std::lock_guard lock(mutex_);
  return read_results(path_);
}

bool ResultsStore::contains(const std::string& config_hash, std::uint64_t seed) const {
  std::lock_guard lock(mutex_);
  return keys_.count({config_hash, seed}) > 0;
}

void ResultsStore::append(const RunRecord& record) {
  std::lock_guard lock(mutex_);
  if (!keys_.emplace(record.config_hash, record.seed).second) {
    throw Error(ErrorCode::kPrecondition, "record " + record.config_hash + "/" + std::to_string(record.seed) +
                                              " is already in the store");
  }
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw Error(ErrorCode::kIo, "cannot append to " + path_.string());
  out << to_json_line(record) << '\n';
  out.flush();
}

Stat summarize(const std::vector<double>& values) {
  Stat s;
  if (values.empty()) return s;
  double sum = 0.0;
  for (const double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (const double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return s;
}

std::vector<AggregateRow> aggregate(const std::vector<RunRecord>& records) {
  struct Group {
    std::vector<double> s, t, sigma, drop;
    int aborted = 0;
    // Keyed by seed so the value order does not depend on record order.
    std::map<std::uint64_t, const RunRecord*> by_seed;
  };
  std::map<std::map<std::string, std::string>, Group> groups;
  for (const RunRecord& r : records) {
    auto keys = r.tags;
    keys.erase(kTagRepeat);
    if (keys.empty()) keys["config_hash"] = r.config_hash;
    groups[keys].by_seed[r.seed] = &r;
  }
  std::vector<AggregateRow> rows;
  for (auto& [keys, g] : groups) {
    AggregateRow row;
    row.keys = keys;
    for (const auto& [seed, r] : g.by_seed) {
      if (r->status != "ok") {
        ++row.aborted;
        continue;
      }
      g.s.push_back(r->metrics.lambda_s);
      g.t.push_back(r->metrics.lambda_t);
      g.sigma.push_back(r->metrics.sigma_st);
      g.drop.push_back(r->metrics.abs_drop);
    }
    row.runs = static_cast<int>(g.t.size());
    row.lambda_s = summarize(g.s);
    row.lambda_t = summarize(g.t);
    row.sigma_st = summarize(g.sigma);
    row.abs_drop = summarize(g.drop);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string aggregate_csv(const std::vector<AggregateRow>& rows) {
  std::set<std::string> key_names;
  for (const AggregateRow& r : rows) {
    for (const auto& [k, v] : r.keys) key_names.insert(k);
  }
  std::ostringstream out;
  for (const std::string& k : key_names) out << k << ',';
  out << "runs,aborted,lambda_s_mean,lambda_s_std,lambda_t_mean,lambda_t_std,sigma_st_mean,sigma_st_std,"
         "abs_drop_mean,abs_drop_std\n";
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return std::string(buf);
  };
  for (const AggregateRow& r : rows) {
    for (const std::string& k : key_names) {
      auto it = r.keys.find(k);
      out << (it == r.keys.end() ? "" : it->second) << ',';
    }
    out << r.runs << ',' << r.aborted << ',' << fmt(r.lambda_s.mean) << ',' << fmt(r.lambda_s.std) << ','
        << fmt(r.lambda_t.mean) << ',' << fmt(r.lambda_t.std) << ',' << fmt(r.sigma_st.mean) << ','
        << fmt(r.sigma_st.std) << ',' << fmt(r.abs_drop.mean) << ',' << fmt(r.abs_drop.std) << '\n';
  }
  return out.str();
}

GridSummary execute_and_aggregate(const GridConfig& grid, ResultsStore& store, const GridOptions& options) {
  if (options.parallelism < 1) throw ConfigError("parallelism", "must be >= 1");
  const std::vector<GridPoint> points = expand_grid(grid);

  GridSummary summary;
  summary.planned = points.size();
  std::vector<std::pair<const GridPoint*, std::string>> todo;
  std::set<std::pair<std::string, std::uint64_t>> wanted;
  for (const GridPoint& p : points) {
    const std::string hash = config_hash(p.config);  // also validates the config
    wanted.emplace(hash, p.config.seed);
    if (store.contains(hash, p.config.seed)) {
      ++summary.resumed;
    } else if (todo.size() < options.max_new_runs) {
      todo.emplace_back(&p, hash);
    }
  }

  // Shared read-only inputs: the dataset and each pretrain checkpoint.
  DatasetBundle data;
  std::map<std::string, Checkpoint> checkpoints;
  if (!todo.empty()) {
    data = load_dataset(grid.base.dataset);
    for (const auto& [p, hash] : todo) {
      const std::string& ref = p->config.pretrain;
      if (!ref.empty() && checkpoints.count(ref) == 0) checkpoints.emplace(ref, load_checkpoint(ref));
    }
  }

  std::atomic<std::size_t> next{0};
  std::mutex summary_mutex;
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= todo.size()) return;
      const GridPoint& p = *todo[i].first;
      TrainOptions opts;
      opts.dataset = &data;
      if (!p.config.pretrain.empty()) opts.pretrained = &checkpoints.at(p.config.pretrain);
      RunRecord record;
      try {
        record = train_run(p.config, opts);
      } catch (const AbortedRun& e) {
        record = RunRecord{};
        record.config_hash = todo[i].second;
        record.seed = p.config.seed;
        record.status = "aborted";
        record.error = e.what();
        record.aborted_step = e.step();
        for (const auto& [k, v] : flatten(resolve_run_config(p.config))) record.manifest[k] = v;
      }
      record.tags = p.tags;
      store.append(record);
      std::lock_guard lock(summary_mutex);
      ++summary.executed;
      if (record.status != "ok") summary.aborted.emplace_back(record.config_hash, record.error);
      if (options.on_record) options.on_record(record);
    }
  };
  const int threads = std::min<int>(options.parallelism, static_cast<int>(std::max<std::size_t>(1, todo.size())));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  std::vector<RunRecord> mine;
  for (RunRecord& r : store.load()) {
    if (wanted.count({r.config_hash, r.seed}) > 0) mine.push_back(std::move(r));
  }
  std::sort(summary.aborted.begin(), summary.aborted.end());
  summary.rows = aggregate(mine);
  return summary;
}

}  // namespace udab

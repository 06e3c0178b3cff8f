#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "udab/config.hpp"
#include "udab/error.hpp"
#include "udab/grid.hpp"
#include "udab/io.hpp"
#include "udab/metrics.hpp"
#include "udab/pretrain.hpp"
#include "udab/records.hpp"
#include "udab/report.hpp"
#include "udab/trainer.hpp"

namespace fs = std::filesystem;
using namespace udab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitAborted = 3;
constexpr int kExitEmptyReport = 4;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  int parallelism = 1;
};

void apply_seed(const Globals& g, std::uint64_t& target) {
  if (g.seed) target = *g.seed;
}

std::vector<double> parse_number_list(const std::string& text, const std::string& key) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (item.empty() || *end != '\0') throw ConfigError(key, "not a number: '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(key, "empty list");
  return out;
}

// ---- generate-data ----

struct GenerateArgs {
  std::string config;
  std::optional<std::string> name;
  std::optional<int> classes;
  std::optional<int> samples;
  std::optional<int> dim;
  std::optional<std::string> shift;
  std::optional<double> magnitude;
  std::optional<std::string> mode;
};

int cmd_generate(const Globals& g, const GenerateArgs& a) {
  SyntheticSpec spec = a.config.empty() ? DatasetRef::default_synthetic_spec() : load_run_config(a.config).dataset.synthetic;
  if (a.name) spec.name = *a.name;
  if (a.classes) spec.num_classes = *a.classes;
  if (a.samples) spec.samples_per_domain = *a.samples;
  if (a.dim) spec.feature_dim = *a.dim;
  if (a.shift) spec.shift.family = parse_shift_family(*a.shift);
  if (a.magnitude) spec.shift.magnitude = *a.magnitude;
  if (a.mode) {
    if (*a.mode == "vector") spec.mode = DataMode::kVector;
    else if (*a.mode == "image") spec.mode = DataMode::kImage;
    else throw ConfigError("mode", "expected vector or image");
  }
  apply_seed(g, spec.seed);
  const DatasetBundle bundle = make_synthetic(spec);
  write_dataset(g.out_dir, bundle);
  std::printf("wrote %s: %d classes, %zu/%zu source, %zu/%zu target (train/test)\n", g.out_dir.c_str(),
              bundle.num_classes, bundle.source_train.size(), bundle.source_test.size(), bundle.target_train.size(),
              bundle.target_test.size());
  return kExitOk;
}

// ---- run ----

struct RunArgs {
  std::string config;
  std::string store;
};

int cmd_run(const Globals& g, const RunArgs& a) {
  RunConfig config = a.config.empty() ? desk_preset() : load_run_config(a.config);
  apply_seed(g, config.seed);
  config = resolve_run_config(config);
  TrainOptions options;
  options.run_dir = g.out_dir;
  RunRecord record;
  int code = kExitOk;
  try {
    record = train_run(config, options);
  } catch (const AbortedRun& e) {
    record.config_hash = config_hash(config);
    record.seed = config.seed;
    record.status = "aborted";
    record.error = e.what();
    record.aborted_step = e.step();
    code = kExitAborted;
  }
  if (!a.store.empty()) {
    ResultsStore store(a.store);
    store.append(record);
  }
  std::cout << to_json_line(record) << '\n';
  if (code != kExitOk) std::cerr << "run aborted: " << record.error << '\n';
  return code;
}

// ---- grid ----

struct GridArgs {
  std::string config;
  std::string store;
  std::size_t max_runs = 0;
};

int cmd_grid(const Globals& g, const GridArgs& a) {
  GridConfig grid = load_grid_config(a.config);
  apply_seed(g, grid.base.seed);
  fs::create_directories(g.out_dir);
  const fs::path store_path = a.store.empty() ? fs::path(g.out_dir) / "results.jsonl" : fs::path(a.store);
  ResultsStore store(store_path);
  GridOptions options;
  options.parallelism = g.parallelism;
  if (a.max_runs > 0) options.max_new_runs = a.max_runs;
  options.on_record = [](const RunRecord& r) {
    std::fprintf(stderr, "[%s] seed=%llu %s lambda_t=%.2f\n", r.config_hash.c_str(),
                 static_cast<unsigned long long>(r.seed), r.status.c_str(), r.metrics.lambda_t);
  };
  const GridSummary summary = execute_and_aggregate(grid, store, options);
  const fs::path agg = fs::path(g.out_dir) / "aggregate.csv";
  std::ofstream(agg, std::ios::binary) << aggregate_csv(summary.rows);
  std::printf("planned %zu, executed %zu, resumed %zu, aborted %zu\nresults: %s\naggregate: %s\n", summary.planned,
              summary.executed, summary.resumed, summary.aborted.size(), store_path.c_str(), agg.c_str());
  for (const auto& [hash, err] : summary.aborted) std::fprintf(stderr, "aborted %s: %s\n", hash.c_str(), err.c_str());
  return summary.aborted.empty() ? kExitOk : kExitAborted;
}

// ---- probe ----

struct ProbeArgs {
  std::string dataset;
  std::string config;
  std::string checkpoint;
  std::string fractions = "0.05,0.1,0.25,0.5,1.0";
  std::string split = "train";
  std::string name = "probe";
  bool shuffle_labels = false;
  int epochs = ProbeOptions{}.epochs;
};

int cmd_probe(const Globals& g, const ProbeArgs& a) {
  DatasetBundle bundle;
  if (!a.dataset.empty()) {
    bundle = read_dataset(a.dataset);
  } else {
    bundle = load_dataset(a.config.empty() ? desk_preset().dataset : load_run_config(a.config).dataset);
  }
  if (a.split != "train" && a.split != "test") throw ConfigError("split", "expected train or test");
  Matrix xs = a.split == "train" ? bundle.source_train.features() : bundle.source_test.features();
  Matrix xt = a.split == "train" ? bundle.target_train.features() : bundle.target_test.features();
  std::string hash = "raw";
  if (!a.checkpoint.empty()) {
    Checkpoint ckpt = load_checkpoint(a.checkpoint);
    std::erase_if(ckpt.params, [](const auto& p) { return p.first.rfind("backbone.", 0) != 0; });
    ModelAssembly model = build_backbone(ckpt.arch, ckpt.input, ckpt.seed);
    load_into(model, ckpt);
    xs = model.backbone->forward(xs, nullptr);
    xt = model.backbone->forward(xt, nullptr);
    hash = parameter_digest(model.backbone_parameters());
  }
  ProbeOptions options;
  options.shuffle_labels = a.shuffle_labels;
  options.epochs = a.epochs;
  std::uint64_t seed = 0;
  apply_seed(g, seed);
  ProbeCurve curve = domain_probe(xs, xt, parse_number_list(a.fractions, "fractions"), seed, options);
  curve.config_hash = hash;
  fs::create_directories(g.out_dir);
  const fs::path out = fs::path(g.out_dir) / (a.name + ".csv");
  write_probe_csv(out, curve);
  for (std::size_t i = 0; i < curve.fractions.size(); ++i) {
    std::printf("fraction %g: discriminator accuracy %.4f\n", curve.fractions[i], curve.discriminator_accuracy[i]);
  }
  std::printf("wrote %s\n", out.c_str());
  return kExitOk;
}

// ---- pretrain ----

int cmd_pretrain(const Globals& g, const std::string& config_path) {
  ArchSpec arch;
  PretextSpec spec = load_pretext_spec(config_path, &arch);
  apply_seed(g, spec.seed);
  const PretrainResult result = run_pretrain(spec, arch);
  save_pretrain(g.out_dir, result);
  std::printf("pretext %s: %zu samples from %zu classes, final loss %.4f\nwrote %s\n", result.manifest.mode.c_str(),
              result.manifest.actual_size, result.manifest.retained.size(),
              result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back(), g.out_dir.c_str());
  return kExitOk;
}

// ---- report ----

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string kind = "arch-robustness-table";
  std::string group_by;
  std::string format = "csv";
  std::string fraction_key = "target_fraction";
};

int cmd_report(const Globals& g, const ReportArgs& a) {
  ReportSpec spec;
  for (const std::string& p : a.inputs) spec.inputs.emplace_back(p);
  spec.kind = parse_report_kind(a.kind);
  spec.format = parse_report_format(a.format);
  spec.fraction_key = a.fraction_key;
  std::stringstream keys(a.group_by);
  std::string key;
  while (std::getline(keys, key, ',')) {
    if (!key.empty()) spec.grouping.push_back(key);
  }
  spec.out_dir = g.out_dir;
  for (const fs::path& p : emit_report(spec)) std::printf("wrote %s\n", p.c_str());
  return kExitOk;
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::kAbortedRun: return kExitAborted;
    case ErrorCode::kEmptyReport: return kExitEmptyReport;
    default: return kExitConfig;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised domain adaptation benchmark harness"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed (run seed, grid master seed, data or probe seed)");
  app.add_option("--out-dir", g.out_dir, "Output directory")->capture_default_str();
  app.add_option("--parallelism", g.parallelism, "Concurrent grid runs")->check(CLI::PositiveNumber)->capture_default_str();

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate-data", "Write a synthetic two-domain dataset");
  generate->add_option("--config", gen.config, "Run config whose dataset section is used");
  generate->add_option("--name", gen.name);
  generate->add_option("--classes", gen.classes);
  generate->add_option("--samples", gen.samples, "Samples per domain");
  generate->add_option("--dim", gen.dim, "Feature dimension");
  generate->add_option("--shift", gen.shift, "rotation, translation, scaling, class-conditional-mean-shift, corruption-noise");
  generate->add_option("--magnitude", gen.magnitude);
  generate->add_option("--mode", gen.mode, "vector or image");

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Train one configuration");
  run->add_option("--config", run_args.config, "Run config (default: desk preset)");
  run->add_option("--store", run_args.store, "Append the record to this results store");

  GridArgs grid_args;
  auto* grid = app.add_subcommand("grid", "Run a grid into a results store and aggregate it");
  grid->add_option("--config", grid_args.config, "Grid config")->required();
  grid->add_option("--store", grid_args.store, "Results store (default: <out-dir>/results.jsonl)");
  grid->add_option("--max-runs", grid_args.max_runs, "Stop after this many new runs");

  ProbeArgs probe_args;
  auto* probe = app.add_subcommand("probe", "Domain discriminator accuracy vs target fraction");
  auto* ds_opt = probe->add_option("--dataset", probe_args.dataset, "Dataset directory");
  probe->add_option("--config", probe_args.config, "Run config whose dataset is probed")->excludes(ds_opt);
  probe->add_option("--checkpoint", probe_args.checkpoint, "Probe backbone features from this checkpoint");
  probe->add_option("--fractions", probe_args.fractions, "Comma-separated target fractions")->capture_default_str();
  probe->add_option("--split", probe_args.split, "train or test")->capture_default_str();
  probe->add_option("--name", probe_args.name, "Output file stem")->capture_default_str();
  probe->add_option("--epochs", probe_args.epochs)->capture_default_str();
  probe->add_flag("--shuffle-labels", probe_args.shuffle_labels, "Permute domain labels (chance control)");

  std::string pretext_config;
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain a backbone on a pretext subset");
  pretrain->add_option("--config", pretext_config, "Pretext config")->required();

  ReportArgs report_args;
  auto* report = app.add_subcommand("report", "Render tables and curves from results stores");
  report->add_option("--store", report_args.inputs, "Results store(s), or probe CSVs for probe-curve")->required();
  report->add_option("--kind", report_args.kind)->capture_default_str();
  report->add_option("--group-by", report_args.group_by, "Comma-separated grouping keys");
  report->add_option("--format", report_args.format, "csv, markdown or svg")->capture_default_str();
  report->add_option("--fraction-key", report_args.fraction_key)->capture_default_str();

  for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*generate) return cmd_generate(g, gen);
    if (*run) return cmd_run(g, run_args);
    if (*grid) return cmd_grid(g, grid_args);
    if (*probe) return cmd_probe(g, probe_args);
    if (*pretrain) return cmd_pretrain(g, pretext_config);
    if (*report) return cmd_report(g, report_args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

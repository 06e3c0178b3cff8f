#include "udab/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "udab/error.hpp"

namespace udab {

namespace {

template <typename T>
const char* type_name() {
  if constexpr (std::is_same_v<T, bool>) return "a boolean";
  else if constexpr (std::is_integral_v<T>) return "an integer";
  else if constexpr (std::is_floating_point_v<T>) return "a number";
  else return "a string";
}

/// One mapping in the config tree; remembers which keys were read so the
/// rest can be reported as unknown.
class Section {
 public:
  Section(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) {
      throw ConfigError(path_.empty() ? "<root>" : path_, "expected a section of key: value lines");
    }
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) const { return node_ && node_.IsMap() && node_[key]; }

  YAML::Node raw(const std::string& key) {
    used_.insert(key);
    return has(key) ? node_[key] : YAML::Node();
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) {
      used_.insert(key);
      return;
    }
    out = scalar<T>(raw(key), key_path(key));
  }

  template <typename T>
  void get_list(const std::string& key, std::vector<T>& out) {
    if (!has(key)) {
      used_.insert(key);
      return;
    }
    const YAML::Node n = raw(key);
    if (!n.IsSequence()) throw ConfigError(key_path(key), "expected a list");
    out.clear();
    for (std::size_t i = 0; i < n.size(); ++i) out.push_back(scalar<T>(n[i], key_path(key) + "[" + std::to_string(i) + "]"));
  }

  Section child(const std::string& key) { return Section(raw(key), key_path(key)); }

  /// All key: number pairs of a free-form subsection.
  std::map<std::string, double> number_map(const std::string& key) {
    std::map<std::string, double> out;
    const YAML::Node n = raw(key);
    if (!n || n.IsNull()) return out;
    if (!n.IsMap()) throw ConfigError(key_path(key), "expected a section");
    for (const auto& kv : n) {
      const std::string k = kv.first.as<std::string>();
      out[k] = scalar<double>(kv.second, key_path(key) + "." + k);
    }
    return out;
  }

  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const std::string k = kv.first.as<std::string>();
      if (used_.count(k) == 0) throw ConfigError(key_path(k), "unknown key '" + k + "'");
    }
  }

 private:
  template <typename T>
  static T scalar(const YAML::Node& n, const std::string& path) {
    if (!n.IsScalar()) throw ConfigError(path, std::string("expected ") + type_name<T>());
    try {
      if constexpr (std::is_same_v<T, std::string>) {
        return n.Scalar();
      } else {
        return n.as<T>();
      }
    } catch (const YAML::Exception&) {
      throw ConfigError(path, std::string("expected ") + type_name<T>() + ", got '" + n.Scalar() + "'");
    }
  }

  YAML::Node node_;
  std::string path_;
  std::set<std::string> used_;
};

YAML::Node load_yaml(const std::string& text) {
  try {
    return YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError("<file>", std::string("cannot parse: ") + e.what());
  }
}

template <typename E, typename F>
void get_enum(Section& s, const std::string& key, E& out, F parse) {
  if (!s.has(key)) {
    s.raw(key);
    return;
  }
  std::string text;
  s.get(key, text);
  try {
    out = parse(text);
  } catch (const ConfigError& e) {
    throw ConfigError(s.key_path(key), e.what());
  } catch (const Error& e) {
    throw ConfigError(s.key_path(key), e.what());
  }
}

void read_dataset(Section s, DatasetRef& d) {
  SyntheticSpec& spec = d.synthetic;
  s.get("path", d.path);
  s.get("name", spec.name);
  s.get("num_classes", spec.num_classes);
  s.get("samples_per_domain", spec.samples_per_domain);
  s.get("feature_dim", spec.feature_dim);
  get_enum(s, "mode", spec.mode, [](std::string_view m) {
    if (m == "vector") return DataMode::kVector;
    if (m == "image") return DataMode::kImage;
    throw ConfigError("dataset.mode", "expected vector or image");
  });
  s.get("seed", spec.seed);
  s.get("train_ratio", spec.train_ratio);
  s.get("class_spread", spec.class_spread);
  s.get("within_class_std", spec.within_class_std);
  Section shift = s.child("shift");
  get_enum(shift, "family", spec.shift.family, parse_shift_family);
  shift.get("magnitude", spec.shift.magnitude);
  shift.get("seed", spec.shift.seed);
  shift.finish();
  s.finish();
}

void read_plan(Section s, SamplingPlan& p) {
  get_enum(s, "strategy", p.strategy, parse_sampling_strategy);
  s.get("fraction", p.fraction);
  s.get("seed", p.seed);
  s.finish();
}

void read_arch(Section s, ArchSpec& a) {
  s.get("family", a.family);
  s.get("depth", a.depth);
  s.get("width", a.width);
  s.get("feature_dim", a.feature_dim);
  s.finish();
}

/// Run-config keys of `root`; the caller finishes the section.
void read_run_fields(Section& root, RunConfig& c) {
  std::string preset;
  root.get("preset", preset);
  if (!preset.empty()) c = preset_by_name(preset);
  read_dataset(root.child("dataset"), c.dataset);
  read_plan(root.child("target_sampling"), c.target_sampling);
  read_plan(root.child("source_sampling"), c.source_sampling);
  Section method = root.child("method");
  method.get("name", c.method.name);
  method.get("weight", c.method.weight);
  for (const auto& [k, v] : method.number_map("params")) c.method.params[k] = v;
  method.finish();
  read_arch(root.child("arch"), c.arch);
  root.get("pretrain", c.pretrain);
  if (c.pretrain == "none") c.pretrain.clear();
  root.get("seed", c.seed);
  root.get("iterations", c.iterations);
  root.get("batch_size", c.batch_size);
  Section opt = root.child("optimizer");
  get_enum(opt, "kind", c.optimizer.kind, parse_optimizer_kind);
  opt.get("learning_rate", c.optimizer.learning_rate);
  opt.get("momentum", c.optimizer.momentum);
  opt.get("weight_decay", c.optimizer.weight_decay);
  get_enum(opt, "schedule", c.optimizer.schedule, parse_lr_schedule);
  opt.finish();
  root.get("validate_every", c.validate_every);
  get_enum(root, "early_stop", c.early_stop, parse_early_stop);
}

RunConfig resolve_with_unknown_method_as_config_error(const RunConfig& c) {
  try {
    return resolve_run_config(c);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kUnknownMethod) throw ConfigError("method.name", e.what());
    throw;
  }
}

// Serialization: build a node tree from dotted keys.
void put(YAML::Node& root, const std::string& dotted, const std::string& value) {
  std::vector<std::string> parts;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  std::vector<YAML::Node> chain{root};
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) chain.push_back(chain.back()[parts[i]]);
  chain.back()[parts.back()] = value;
}

std::string number_text(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, end);
}

std::string emit(const YAML::Node& node) {
  YAML::Emitter out;
  out << node;
  return std::string(out.c_str()) + "\n";
}

YAML::Node run_node(const RunConfig& c) {
  YAML::Node root(YAML::NodeType::Map);
  for (const auto& [k, v] : flatten(c)) put(root, k, v);
  return root;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  Section root(load_yaml(text), "");
  RunConfig c;
  read_run_fields(root, c);
  root.finish();
  return resolve_with_unknown_method_as_config_error(c);
}

GridConfig parse_grid_config(const std::string& text) {
  Section root(load_yaml(text), "");
  GridConfig g;
  read_run_fields(root, g.base);
  Section axes = root.child("axes");
  axes.get_list("methods", g.axes.methods);
  axes.get_list("archs", g.axes.archs);
  axes.get_list("target_fractions", g.axes.target_fractions);
  axes.get_list("source_fractions", g.axes.source_fractions);
  axes.get_list("strategies", g.axes.strategies);
  axes.get_list("pretrain", g.axes.pretrain);
  for (std::string& p : g.axes.pretrain) {
    if (p == "none") p.clear();
  }
  axes.finish();
  root.get("repeats", g.repeats);
  root.finish();
  g.base = resolve_with_unknown_method_as_config_error(g.base);
  if (g.repeats < 1) throw ConfigError("repeats", "must be >= 1");
  // Check every cell up front so a typo fails before any run starts.
  for (const std::string& m : g.axes.methods) {
    if (!MethodRegistry::instance().contains(m)) throw ConfigError("axes.methods", "unknown method '" + m + "'");
  }
  for (const std::string& a : g.axes.archs) {
    if (!ArchRegistry::instance().contains(a)) throw ConfigError("axes.archs", "unknown architecture '" + a + "'");
  }
  for (const std::string& s : g.axes.strategies) {
    try {
      parse_sampling_strategy(s);
    } catch (const Error& e) {
      throw ConfigError("axes.strategies", e.what());
    }
  }
  try {
    for (const GridPoint& p : expand_grid(g)) resolve_run_config(p.config);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kEmptyAxis) throw ConfigError("axes", e.what());
    throw;
  }
  return g;
}

PretextSpec parse_pretext_spec(const std::string& text, ArchSpec* arch) {
  Section root(load_yaml(text), "");
  PretextSpec p;
  read_dataset(root.child("corpus"), p.corpus);
  root.get("budget", p.budget);
  std::vector<int> excluded;
  root.get_list("exclude_classes", excluded);
  p.exclude_classes = std::set<int>(excluded.begin(), excluded.end());
  get_enum(root, "mode", p.mode, parse_pretext_mode);
  root.get("epochs", p.epochs);
  root.get("batch_size", p.batch_size);
  root.get("learning_rate", p.learning_rate);
  root.get("temperature", p.temperature);
  root.get("projection_head", p.projection_head);
  root.get("seed", p.seed);
  ArchSpec a{"mlp", 2, 0, 32};
  read_arch(root.child("arch"), a);
  root.finish();
  if (p.budget < 1) throw ConfigError("budget", "must be >= 1");
  if (p.epochs < 0) throw ConfigError("epochs", "must be >= 0");
  if (p.batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (!(p.learning_rate > 0.0)) throw ConfigError("learning_rate", "must be > 0");
  if (!(p.temperature > 0.0)) throw ConfigError("temperature", "must be > 0");
  if (!ArchRegistry::instance().contains(a.family)) throw ConfigError("arch.family", "unknown architecture '" + a.family + "'");
  if (arch != nullptr) *arch = a;
  return p;
}

std::string serialize(const RunConfig& config) { return emit(run_node(config)); }

std::string serialize(const GridConfig& grid) {
  YAML::Node root = run_node(grid.base);
  YAML::Node axes(YAML::NodeType::Map);
  auto strings = [&](const char* key, const std::vector<std::string>& v) {
    YAML::Node seq(YAML::NodeType::Sequence);
    for (const std::string& s : v) seq.push_back(s);
    axes[key] = seq;
  };
  auto numbers = [&](const char* key, const std::vector<double>& v) {
    YAML::Node seq(YAML::NodeType::Sequence);
    for (const double d : v) seq.push_back(number_text(d));
    axes[key] = seq;
  };
  strings("methods", grid.axes.methods);
  strings("archs", grid.axes.archs);
  numbers("target_fractions", grid.axes.target_fractions);
  numbers("source_fractions", grid.axes.source_fractions);
  strings("strategies", grid.axes.strategies);
  strings("pretrain", grid.axes.pretrain);
  root["axes"] = axes;
  root["repeats"] = std::to_string(grid.repeats);
  return emit(root);
}

std::string serialize(const PretextSpec& spec, const ArchSpec& arch) {
  RunConfig carrier;
  carrier.dataset = spec.corpus;
  YAML::Node root(YAML::NodeType::Map);
  for (const auto& [k, v] : flatten(carrier)) {
    if (k.rfind("dataset.", 0) == 0) put(root, "corpus." + k.substr(8), v);
  }
  root["budget"] = std::to_string(spec.budget);
  YAML::Node excluded(YAML::NodeType::Sequence);
  for (const int c : spec.exclude_classes) excluded.push_back(std::to_string(c));
  root["exclude_classes"] = excluded;
  root["mode"] = std::string(to_string(spec.mode));
  root["epochs"] = std::to_string(spec.epochs);
  root["batch_size"] = std::to_string(spec.batch_size);
  root["learning_rate"] = number_text(spec.learning_rate);
  root["temperature"] = number_text(spec.temperature);
  root["projection_head"] = spec.projection_head ? "true" : "false";
  root["seed"] = std::to_string(spec.seed);
  YAML::Node a(YAML::NodeType::Map);
  a["family"] = arch.family;
  a["depth"] = std::to_string(arch.depth);
  a["width"] = std::to_string(arch.width);
  a["feature_dim"] = std::to_string(arch.feature_dim);
  root["arch"] = a;
  return emit(root);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_text_file(path)); }
GridConfig load_grid_config(const std::filesystem::path& path) { return parse_grid_config(read_text_file(path)); }
PretextSpec load_pretext_spec(const std::filesystem::path& path, ArchSpec* arch) {
  return parse_pretext_spec(read_text_file(path), arch);
}

bool same_config(const RunConfig& a, const RunConfig& b) { return flatten(a) == flatten(b); }

}  // namespace udab

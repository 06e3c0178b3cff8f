#include "udab/zoo.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "udab/error.hpp"
#include "udab/io.hpp"

namespace udab {

using nn::Linear;
using nn::ModulePtr;
using nn::Relu;
using nn::Sequential;

InputSpec input_spec_of(const DatasetBundle& bundle) {
  return InputSpec{bundle.source_train.dim(), bundle.source_train.image_shape(), bundle.num_classes};
}

namespace {

constexpr int kMaxVectorTokens = 8;

ModulePtr make_mlp(const ArchSpec& spec, const InputSpec& input, Rng& rng) {
  auto net = std::make_unique<Sequential>();
  int in = input.dim;
  for (int i = 0; i < spec.depth; ++i) {
    net->add(std::make_unique<Linear>(in, spec.width, rng, "backbone.fc" + std::to_string(i)));
    net->add(std::make_unique<Relu>(spec.width));
    in = spec.width;
  }
  net->add(std::make_unique<Linear>(in, spec.feature_dim, rng, "backbone.out"));
  net->add(std::make_unique<Relu>(spec.feature_dim));
  return net;
}

// Vector inputs are treated as 1 x d single-channel images with 1x3 kernels.
ModulePtr make_conv(const ArchSpec& spec, const InputSpec& input, Rng& rng) {
  const bool image = input.shape.is_image();
  ImageShape shape = image ? input.shape : ImageShape{1, input.dim, 1};
  const int kh = image ? 3 : 1;
  auto net = std::make_unique<Sequential>();
  for (int i = 0; i < spec.depth; ++i) {
    auto conv = std::make_unique<nn::Conv2d>(shape, spec.width, kh, 3, rng, "backbone.conv" + std::to_string(i));
    shape = conv->out_shape();
    net->add(std::move(conv));
    net->add(std::make_unique<Relu>(shape.size()));
  }
  net->add(std::make_unique<Linear>(shape.size(), spec.feature_dim, rng, "backbone.out"));
  net->add(std::make_unique<Relu>(spec.feature_dim));
  return net;
}

ModulePtr token_mlp(int tokens, int width, Rng& rng, const std::string& name) {
  auto mlp = std::make_unique<Sequential>();
  mlp->add(std::make_unique<Linear>(width, 2 * width, rng, name + ".fc0"));
  mlp->add(std::make_unique<Relu>(2 * width));
  mlp->add(std::make_unique<Linear>(2 * width, width, rng, name + ".fc1"));
  return std::make_unique<nn::PerToken>(tokens, width, std::move(mlp));
}

template <typename MixerFactory>
ModulePtr make_token_net(const ArchSpec& spec, const InputSpec& input, Rng& rng, MixerFactory&& mixer) {
  auto net = std::make_unique<Sequential>();
  auto embed = std::make_unique<nn::PatchEmbed>(nn::PatchEmbed::layout(input.dim, input.shape, kMaxVectorTokens),
                                                spec.width, rng, "backbone.embed");
  const int tokens = embed->tokens();
  const int w = spec.width;
  net->add(std::move(embed));
  for (int i = 0; i < spec.depth; ++i) {
    const std::string block = "backbone.block" + std::to_string(i);
    auto mix = std::make_unique<Sequential>();
    mix->add(std::make_unique<nn::LayerNorm>(tokens, w, block + ".norm0"));
    mix->add(mixer(tokens, w, rng, block + ".mix"));
    net->add(std::make_unique<nn::Residual>(std::move(mix)));
    auto channel = std::make_unique<Sequential>();
    channel->add(std::make_unique<nn::LayerNorm>(tokens, w, block + ".norm1"));
    channel->add(token_mlp(tokens, w, rng, block + ".mlp"));
    net->add(std::make_unique<nn::Residual>(std::move(channel)));
  }
  net->add(std::make_unique<nn::LayerNorm>(tokens, w, "backbone.norm"));
  net->add(std::make_unique<nn::TokenMeanPool>(tokens, w));
  net->add(std::make_unique<Linear>(w, spec.feature_dim, rng, "backbone.out"));
  net->add(std::make_unique<Relu>(spec.feature_dim));
  return net;
}

ModulePtr make_attention(const ArchSpec& spec, const InputSpec& input, Rng& rng) {
  return make_token_net(spec, input, rng, [](int tokens, int w, Rng& r, const std::string& name) -> ModulePtr {
    return std::make_unique<nn::SelfAttention>(tokens, w, r, name);
  });
}

ModulePtr make_mixer(const ArchSpec& spec, const InputSpec& input, Rng& rng) {
  return make_token_net(spec, input, rng, [](int tokens, int w, Rng& r, const std::string& name) -> ModulePtr {
    return std::make_unique<nn::TokenMix>(tokens, w, r, name);
  });
}

ModulePtr make_head(int in, int out, Rng& rng, const std::string& name) {
  auto head = std::make_unique<Sequential>();
  head->add(std::make_unique<Linear>(in, kHeadHidden, rng, name + ".fc0"));
  head->add(std::make_unique<Relu>(kHeadHidden));
  head->add(std::make_unique<Linear>(kHeadHidden, out, rng, name + ".fc1"));
  return head;
}

std::vector<nn::Parameter*> collect(const ModulePtr& m) {
  std::vector<nn::Parameter*> out;
  if (m) m->collect(out);
  return out;
}

}  // namespace

ArchRegistry::ArchRegistry() {
  factories_["mlp"] = make_mlp;
  factories_["conv"] = make_conv;
  factories_["attention"] = make_attention;
  factories_["mixer"] = make_mixer;
}

ArchRegistry& ArchRegistry::instance() {
  static ArchRegistry registry;
  return registry;
}

void ArchRegistry::add(const std::string& family, BackboneFactory factory) { factories_[family] = std::move(factory); }

bool ArchRegistry::contains(const std::string& family) const { return factories_.count(family) > 0; }

const BackboneFactory& ArchRegistry::get(const std::string& family) const {
  auto it = factories_.find(family);
  if (it == factories_.end()) {
    throw Error(ErrorCode::kUnknownArchitecture, "no backbone family named '" + family + "'");
  }
  return it->second;
}

std::vector<std::string> ArchRegistry::families() const {
  std::vector<std::string> out;
  for (const auto& [name, f] : factories_) out.push_back(name);
  return out;
}

std::vector<nn::Parameter*> ModelAssembly::parameters() {
  std::vector<nn::Parameter*> out;
  for (const ModulePtr* m : {&backbone, &classifier, &aux_head, &discriminator}) {
    if (*m) (*m)->collect(out);
  }
  return out;
}

std::vector<nn::Parameter*> ModelAssembly::backbone_parameters() { return collect(backbone); }
std::vector<nn::Parameter*> ModelAssembly::classifier_parameters() { return collect(classifier); }

std::size_t ModelAssembly::backbone_parameter_count() { return nn::parameter_count(backbone_parameters()); }

void ModelAssembly::add_aux_head() {
  Rng rng(derive_seed(seed, "aux-head"));
  aux_head = make_head(feature_dim(), input.num_classes, rng, "aux");
}

void ModelAssembly::add_discriminator(int input_dim) {
  Rng rng(derive_seed(seed, "discriminator"));
  auto disc = std::make_unique<Sequential>();
  disc->add(std::make_unique<Linear>(input_dim, kDiscriminatorHidden, rng, "discriminator.fc0"));
  disc->add(std::make_unique<Relu>(kDiscriminatorHidden));
  disc->add(std::make_unique<Linear>(kDiscriminatorHidden, kDiscriminatorHidden, rng, "discriminator.fc1"));
  disc->add(std::make_unique<Relu>(kDiscriminatorHidden));
  disc->add(std::make_unique<Linear>(kDiscriminatorHidden, 1, rng, "discriminator.out"));
  discriminator = std::move(disc);
}

ModelAssembly build_backbone(const ArchSpec& spec, const InputSpec& input, std::uint64_t seed) {
  const BackboneFactory& factory = ArchRegistry::instance().get(spec.family);
  if (spec.feature_dim < 8) throw Error(ErrorCode::kPrecondition, "feature_dim must be at least 8");
  if (spec.depth < 1 || spec.width < 1) throw Error(ErrorCode::kPrecondition, "depth and width must be positive");
  if (input.dim < 1 || input.num_classes < 2) throw Error(ErrorCode::kPrecondition, "invalid input spec");
  ModelAssembly model;
  model.arch = spec;
  model.input = input;
  model.seed = seed;
  Rng backbone_rng(derive_seed(seed, "backbone"));
  model.backbone = factory(spec, input, backbone_rng);
  Rng head_rng(derive_seed(seed, "classifier"));
  model.classifier = make_head(model.feature_dim(), input.num_classes, head_rng, "classifier");
  return model;
}

ArchSpec default_preset(const std::string& family, const InputSpec& input) {
  ArchRegistry::instance().get(family);
  ArchSpec spec;
  spec.family = family;
  spec.feature_dim = 32;
  spec.depth = family == "attention" ? 1 : 2;
  int best_width = 4;
  std::size_t best_gap = std::numeric_limits<std::size_t>::max();
  for (int width = 4; width <= 256; width += 2) {
    spec.width = width;
    Rng rng(0);
    std::vector<nn::Parameter*> params;
    auto net = ArchRegistry::instance().get(family)(spec, input, rng);
    net->collect(params);
    const std::size_t count = nn::parameter_count(params);
    const std::size_t gap = count > kPresetParameterBudget ? count - kPresetParameterBudget : kPresetParameterBudget - count;
    if (gap < best_gap) {
      best_gap = gap;
      best_width = width;
    }
    if (count > kPresetParameterBudget) break;
  }
  spec.width = best_width;
  return spec;
}

Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

Matrix predict(const ModelAssembly& model, const Matrix& batch) {
  if (batch.cols() != model.input.dim) {
    throw Error(ErrorCode::kShape, "batch width " + std::to_string(batch.cols()) + " does not match model input " +
                                       std::to_string(model.input.dim));
  }
  return softmax(model.classifier->forward(model.backbone->forward(batch, nullptr), nullptr));
}

Matrix grad_reverse(const Matrix& x, double coeff) {
  if (coeff < 0.0) throw Error(ErrorCode::kPrecondition, "gradient reversal coefficient must be >= 0");
  return x;
}

Matrix grad_reverse_backward(const Matrix& grad, double coeff) {
  if (coeff < 0.0) throw Error(ErrorCode::kPrecondition, "gradient reversal coefficient must be >= 0");
  return -coeff * grad;
}

bool operator==(const Checkpoint& a, const Checkpoint& b) {
  if (!(a.arch == b.arch) || a.seed != b.seed || a.step != b.step || a.params.size() != b.params.size()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    const auto& [na, ma] = a.params[i];
    const auto& [nb, mb] = b.params[i];
    if (na != nb || ma.rows() != mb.rows() || ma.cols() != mb.cols() || ma != mb) return false;
  }
  return true;
}

Checkpoint make_checkpoint(ModelAssembly& model, std::int64_t step, const std::string& prefix) {
  Checkpoint ckpt;
  ckpt.arch = model.arch;
  ckpt.input = model.input;
  ckpt.seed = model.seed;
  ckpt.step = step;
  for (nn::Parameter* p : model.parameters()) {
    if (p->name.rfind(prefix, 0) == 0) ckpt.params.emplace_back(p->name, p->value);
  }
  return ckpt;
}

void load_into(ModelAssembly& model, const Checkpoint& ckpt) {
  std::map<std::string, nn::Parameter*> by_name;
  for (nn::Parameter* p : model.parameters()) by_name[p->name] = p;
  for (const auto& [name, value] : ckpt.params) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error(ErrorCode::kShape, "checkpoint parameter '" + name + "' not in model");
    if (it->second->value.rows() != value.rows() || it->second->value.cols() != value.cols()) {
      throw Error(ErrorCode::kShape, "checkpoint parameter '" + name + "' has a different shape");
    }
    it->second->value = value;
  }
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  std::filesystem::create_directories(dir);
  KeyValues manifest{
      {"arch.family", ckpt.arch.family},
      {"arch.depth", std::to_string(ckpt.arch.depth)},
      {"arch.width", std::to_string(ckpt.arch.width)},
      {"arch.feature_dim", std::to_string(ckpt.arch.feature_dim)},
      {"input.dim", std::to_string(ckpt.input.dim)},
      {"input.num_classes", std::to_string(ckpt.input.num_classes)},
      {"input.image_shape", std::to_string(ckpt.input.shape.height) + "x" + std::to_string(ckpt.input.shape.width) +
                                "x" + std::to_string(ckpt.input.shape.channels)},
      {"seed", std::to_string(ckpt.seed)},
      {"step", std::to_string(ckpt.step)},
      {"param_count", std::to_string(ckpt.params.size())},
  };
  std::ofstream bin(dir / "params.bin", std::ios::binary);
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    char key[32];
    std::snprintf(key, sizeof key, "param.%04zu", i);
    const auto& [name, value] = ckpt.params[i];
    manifest[key] = name + " " + std::to_string(value.rows()) + " " + std::to_string(value.cols());
    write_array(bin, value);
  }
  if (!bin) throw Error(ErrorCode::kIo, "failed writing " + (dir / "params.bin").string());
  write_key_values(dir / "manifest", manifest);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const KeyValues m = read_key_values(dir / "manifest");
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = m.find(key);
    if (it == m.end()) throw Error(ErrorCode::kIo, "checkpoint manifest missing '" + key + "'");
    return it->second;
  };
  Checkpoint ckpt;
  ckpt.arch.family = get("arch.family");
  ckpt.arch.depth = std::stoi(get("arch.depth"));
  ckpt.arch.width = std::stoi(get("arch.width"));
  ckpt.arch.feature_dim = std::stoi(get("arch.feature_dim"));
  ckpt.input.dim = std::stoi(get("input.dim"));
  ckpt.input.num_classes = std::stoi(get("input.num_classes"));
  {
    char s1 = 0, s2 = 0;
    std::istringstream is(get("input.image_shape"));
    is >> ckpt.input.shape.height >> s1 >> ckpt.input.shape.width >> s2 >> ckpt.input.shape.channels;
  }
  ckpt.seed = std::stoull(get("seed"));
  ckpt.step = std::stoll(get("step"));
  const std::size_t count = std::stoul(get("param_count"));
  std::ifstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw Error(ErrorCode::kIo, "missing " + (dir / "params.bin").string());
  for (std::size_t i = 0; i < count; ++i) {
    char key[32];
    std::snprintf(key, sizeof key, "param.%04zu", i);
    std::istringstream is(get(key));
    std::string name;
    is >> name;
    Matrix value = read_matrix(bin);
    ckpt.params.emplace_back(std::move(name), std::move(value));
  }
  return ckpt;
}

std::string parameter_digest(const std::vector<nn::Parameter*>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const nn::Parameter* p : params) {
    h = fnv1a64(p->name, h);
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(p->value.data()), sizeof(double) * p->value.size()), h);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace udab

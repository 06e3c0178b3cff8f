#include "udab/io.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "udab/error.hpp"

namespace udab {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw Error(ErrorCode::kIo, "truncated array header");
  return v;
}

void write_header(std::ostream& out, ArrayHeader::DType dtype, std::size_t rows, std::size_t cols) {
  put_u32(out, ArrayHeader::kMagic);
  put_u32(out, static_cast<std::uint32_t>(dtype));
  put_u32(out, static_cast<std::uint32_t>(rows));
  put_u32(out, static_cast<std::uint32_t>(cols));
}

const char* kSplits[] = {"source_train", "source_test", "target_train", "target_test"};

}  // namespace

void write_array(std::ostream& out, const Matrix& m) {
  write_header(out, ArrayHeader::DType::kFloat64, static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
}

void write_array(std::ostream& out, const std::vector<int>& v) {
  write_header(out, ArrayHeader::DType::kInt32, v.size(), 1);
  for (const int x : v) {
    const auto y = static_cast<std::int32_t>(x);
    out.write(reinterpret_cast<const char*>(&y), sizeof y);
  }
}

ArrayHeader read_header(std::istream& in) {
  if (get_u32(in) != ArrayHeader::kMagic) throw Error(ErrorCode::kIo, "bad array magic");
  ArrayHeader h;
  const std::uint32_t dtype = get_u32(in);
  if (dtype != 1 && dtype != 2) throw Error(ErrorCode::kIo, "unknown dtype code " + std::to_string(dtype));
  h.dtype = static_cast<ArrayHeader::DType>(dtype);
  h.rows = get_u32(in);
  h.cols = get_u32(in);
  return h;
}

Matrix read_matrix(std::istream& in) {
  const ArrayHeader h = read_header(in);
  if (h.dtype != ArrayHeader::DType::kFloat64) throw Error(ErrorCode::kIo, "expected float64 array");
  Matrix m(h.rows, h.cols);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!in) throw Error(ErrorCode::kIo, "truncated float64 array");
  return m;
}

std::vector<int> read_labels(std::istream& in) {
  const ArrayHeader h = read_header(in);
  if (h.dtype != ArrayHeader::DType::kInt32 || h.cols != 1) throw Error(ErrorCode::kIo, "expected int32 column");
  std::vector<int> v(h.rows);
  for (auto& x : v) {
    std::int32_t y = 0;
    in.read(reinterpret_cast<char*>(&y), sizeof y);
    x = y;
  }
  if (!in) throw Error(ErrorCode::kIo, "truncated int32 array");
  return v;
}

void write_key_values(const std::filesystem::path& path, const KeyValues& kv) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  KeyValues kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kIo, "malformed line in " + path.string() + ": " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

namespace {

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const DatasetBundle& bundle) {
  std::filesystem::create_directories(dir);
  const SyntheticSpec& p = bundle.provenance;
  const ImageShape& shape = bundle.source_train.image_shape();
  KeyValues meta{
      {"name", bundle.name},
      {"num_classes", std::to_string(bundle.num_classes)},
      {"feature_dim", std::to_string(bundle.source_train.dim())},
      {"shift_family", std::string(to_string(p.shift.family))},
      {"shift_magnitude", format_double(p.shift.magnitude)},
      {"shift_seed", std::to_string(p.shift.seed)},
      {"seed", std::to_string(p.seed)},
      {"samples_per_domain", std::to_string(p.samples_per_domain)},
      {"image_shape", std::to_string(shape.height) + "x" + std::to_string(shape.width) + "x" +
                          std::to_string(shape.channels)},
  };
  write_key_values(dir / "meta", meta);
  const LabeledSet* sets[] = {&bundle.source_train, &bundle.source_test, &bundle.target_train, &bundle.target_test};
  for (int i = 0; i < 4; ++i) {
    std::ofstream x(dir / (std::string(kSplits[i]) + ".x.bin"), std::ios::binary);
    write_array(x, sets[i]->features());
    std::ofstream y(dir / (std::string(kSplits[i]) + ".y.bin"), std::ios::binary);
    const auto labels = sets[i]->labels(LabelReader::kIo);
    write_array(y, std::vector<int>(labels.begin(), labels.end()));
    if (!x || !y) throw Error(ErrorCode::kIo, "failed writing split " + std::string(kSplits[i]));
  }
}

DatasetBundle DirectoryLoader::load(const std::filesystem::path& dir) const {
  const KeyValues meta = read_key_values(dir / "meta");
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw Error(ErrorCode::kIo, "meta is missing '" + key + "'");
    return it->second;
  };
  DatasetBundle bundle;
  bundle.name = get("name");
  bundle.num_classes = std::stoi(get("num_classes"));
  SyntheticSpec& p = bundle.provenance;
  p.name = bundle.name;
  p.num_classes = bundle.num_classes;
  p.feature_dim = std::stoi(get("feature_dim"));
  if (auto it = meta.find("shift_family"); it != meta.end()) p.shift.family = parse_shift_family(it->second);
  if (auto it = meta.find("shift_magnitude"); it != meta.end()) p.shift.magnitude = std::stod(it->second);
  if (auto it = meta.find("shift_seed"); it != meta.end()) p.shift.seed = std::stoull(it->second);
  if (auto it = meta.find("seed"); it != meta.end()) p.seed = std::stoull(it->second);
  if (auto it = meta.find("samples_per_domain"); it != meta.end()) p.samples_per_domain = std::stoi(it->second);
  ImageShape shape;
  if (auto it = meta.find("image_shape"); it != meta.end()) {
    char sep1 = 0, sep2 = 0;
    std::istringstream is(it->second);
    is >> shape.height >> sep1 >> shape.width >> sep2 >> shape.channels;
  }
  p.mode = shape.is_image() ? DataMode::kImage : DataMode::kVector;

  LabeledSet* sets[] = {&bundle.source_train, &bundle.source_test, &bundle.target_train, &bundle.target_test};
  for (int i = 0; i < 4; ++i) {
    std::ifstream x(dir / (std::string(kSplits[i]) + ".x.bin"), std::ios::binary);
    std::ifstream y(dir / (std::string(kSplits[i]) + ".y.bin"), std::ios::binary);
    if (!x || !y) throw Error(ErrorCode::kIo, "missing split files for " + std::string(kSplits[i]));
    const Domain domain = i < 2 ? Domain::kSource : Domain::kTarget;
    *sets[i] = LabeledSet(read_matrix(x), read_labels(y), domain, shape);
  }
  bundle.validate();
  return bundle;
}

DatasetBundle read_dataset(const std::filesystem::path& dir) { return DirectoryLoader{}.load(dir); }

}  // namespace udab

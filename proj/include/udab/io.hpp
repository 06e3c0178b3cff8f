#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "udab/data.hpp"
#include "udab/tensor.hpp"

namespace udab {

/// Every binary array starts with this 16-byte little-endian header.
struct ArrayHeader {
  static constexpr std::uint32_t kMagic = 0x42414455;  // "UDAB"
  enum class DType : std::uint32_t { kFloat64 = 1, kInt32 = 2 };

  DType dtype = DType::kFloat64;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
};

void write_array(std::ostream& out, const Matrix& m);
void write_array(std::ostream& out, const std::vector<int>& v);
ArrayHeader read_header(std::istream& in);
Matrix read_matrix(std::istream& in);
std::vector<int> read_labels(std::istream& in);

/// `key=value` lines, sorted by key on write.
using KeyValues = std::map<std::string, std::string>;
void write_key_values(const std::filesystem::path& path, const KeyValues& kv);
KeyValues read_key_values(const std::filesystem::path& path);

/// Writes `meta` plus `<split>.x.bin` / `<split>.y.bin` for the four splits.
void write_dataset(const std::filesystem::path& dir, const DatasetBundle& bundle);

/// Source of datasets for the trainer. The directory layout written by
/// write_dataset is the built-in format; other corpora plug in here.
class DatasetLoader {
 public:
  virtual ~DatasetLoader() = default;
  virtual DatasetBundle load(const std::filesystem::path& location) const = 0;
};

class DirectoryLoader : public DatasetLoader {
 public:
  DatasetBundle load(const std::filesystem::path& location) const override;
};

DatasetBundle read_dataset(const std::filesystem::path& dir);

}  // namespace udab

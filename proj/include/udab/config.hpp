#pragma once

#include <filesystem>
#include <string>

#include "udab/grid.hpp"
#include "udab/pretrain.hpp"
#include "udab/trainer.hpp"

namespace udab {

// Config files use an indentation-based key/value format (a YAML subset);
// docs/config.md has the grammar. Unknown keys and type mismatches throw
// ConfigError carrying the dotted key path.

RunConfig parse_run_config(const std::string& text);
GridConfig parse_grid_config(const std::string& text);
/// The `arch` section of a pretext file is returned through `arch`.
PretextSpec parse_pretext_spec(const std::string& text, ArchSpec* arch = nullptr);

/// Every field, defaults included, in canonical order.
std::string serialize(const RunConfig& config);
std::string serialize(const GridConfig& grid);
std::string serialize(const PretextSpec& spec, const ArchSpec& arch);

std::string read_text_file(const std::filesystem::path& path);
RunConfig load_run_config(const std::filesystem::path& path);
GridConfig load_grid_config(const std::filesystem::path& path);
PretextSpec load_pretext_spec(const std::filesystem::path& path, ArchSpec* arch = nullptr);

bool same_config(const RunConfig& a, const RunConfig& b);

}  // namespace udab

#pragma once

#include <string>

#include "udab/trainer.hpp"

namespace udab {

/// One RunRecord as a single-line JSON object (no trailing newline).
/// Non-finite numbers are written as null.
std::string to_json_line(const RunRecord& record);
/// Throws kIo on malformed input.
RunRecord run_record_from_json(const std::string& line);

}  // namespace udab

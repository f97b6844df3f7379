#pragma once
// Shared JSON plumbing for the record and sample schemas. Not installed.

#include "vpkit/error.hpp"
#include "vpkit/geometry.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace vpkit::detail {

using ojson = nlohmann::ordered_json;

std::string read_text_file(const std::filesystem::path& path);
/// Throws `on_parse_error` with the parser message when the text is not JSON.
nlohmann::json read_json_file(const std::filesystem::path& path, ErrorCode on_parse_error);
/// Non-empty lines of a JSONL file, paired with their 1-based line number.
std::vector<std::pair<std::size_t, std::string>> read_lines(const std::filesystem::path& path);
/// Write to a sibling temp file then rename over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

ojson prompt_to_json(const VisualPrompt& p);
VisualPrompt prompt_from_json(const nlohmann::json& j);

ojson mask_to_json(const BinaryMask& m);
BinaryMask mask_from_json(const nlohmann::json& j);

} // namespace vpkit::detail

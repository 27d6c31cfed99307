#pragma once

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace psycode {

using Json = nlohmann::json;

/// Calls `fn(record, line_number)` for each non-blank line. Parse failures
/// raise ValidationError naming the file and line.
void for_each_jsonl(const std::string& path, const std::function<void(const Json&, std::size_t)>& fn);

void write_jsonl(const std::string& path, const std::vector<Json>& records);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace psycode

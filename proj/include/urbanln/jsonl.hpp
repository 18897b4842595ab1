#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "urbanln/common.hpp"

namespace urbanln {

using json = nlohmann::json;

// Reads a whole file; throws IoError if unreadable.
std::string read_text_file(const std::string& path);

// Writes atomically: content goes to "<path>.tmp" first, then a rename.
void write_text_atomic(const std::string& path, const std::string& content);

// One JSON object per non-empty line. Parse failures name the line number.
std::vector<json> read_jsonl(const std::string& path);

void write_jsonl(const std::string& path, const std::vector<json>& records);

json parse_json(const std::string& text, const std::string& what);

} // namespace urbanln

#pragma once

#include <filesystem>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace spikekd::io {

/// printf "%.17g": enough digits to round-trip any double.
std::string format_double(double v);

std::string read_text(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partial file. Parent directories are created.
void write_atomic(const std::filesystem::path& path, const std::string& content);

/// All-or-nothing variant for a group of files. Every file is staged first;
/// if any step fails, the staged files and any already moved into place are
/// removed before the exception propagates.
void write_all_atomic(const std::vector<std::pair<std::filesystem::path, std::string>>& files);

/// Pretty-printed JSON document with a trailing newline.
std::string json_document(const nlohmann::json& j);
/// One compact record per line.
std::string json_lines(const std::vector<nlohmann::json>& records);
std::vector<nlohmann::json> parse_json_lines(const std::string& text, const std::string& what);

nlohmann::json read_json(const std::filesystem::path& path);

/// Throws std::invalid_argument unless `j` is an object whose keys all appear in `known`.
void require_known_keys(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& section);

}  // namespace spikekd::io

#include "spikekd/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <system_error>

namespace spikekd::io {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_atomic(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw std::runtime_error("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw std::runtime_error("write failed for " + path.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw std::runtime_error("cannot move output into place at " + path.string() + ": " + ec.message());
  }
}

void write_all_atomic(const std::vector<std::pair<std::filesystem::path, std::string>>& files) {
  namespace fs = std::filesystem;
  std::vector<fs::path> staged, placed;
  auto cleanup = [&] {
    std::error_code ec;
    for (const auto& p : staged) fs::remove(p, ec);
    for (const auto& p : placed) fs::remove(p, ec);
  };
  try {
    for (const auto& [path, content] : files) {
      fs::path tmp = path;
      tmp += ".partial";
      if (path.has_parent_path()) fs::create_directories(path.parent_path());
      staged.push_back(tmp);
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw std::runtime_error("cannot write " + path.string());
      out << content;
      out.flush();
      if (!out) throw std::runtime_error("write failed for " + path.string());
    }
    for (std::size_t k = 0; k < files.size(); ++k) {
      fs::rename(staged[k], files[k].first);
      placed.push_back(files[k].first);
    }
  } catch (...) {
    cleanup();
    throw;
  }
}

std::string json_document(const nlohmann::json& j) { return j.dump(2) + "\n"; }

std::string json_lines(const std::vector<nlohmann::json>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

std::vector<nlohmann::json> parse_json_lines(const std::string& text, const std::string& what) {
  std::vector<nlohmann::json> out;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw std::invalid_argument(what + ": line " + std::to_string(n) + " is not valid JSON (" + e.what() + ")");
    }
  }
  return out;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": invalid JSON (" + e.what() + ")");
  }
}

void require_known_keys(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& section) {
  if (!j.is_object()) throw std::invalid_argument(section + ": expected an object");
  for (const auto& item : j.items()) {
    const std::string& key = item.key();
    bool found = false;
    for (const char* k : known) found = found || key == k;
    if (!found) throw std::invalid_argument(section + ": unknown key '" + key + "'");
  }
}

}  // namespace spikekd::io

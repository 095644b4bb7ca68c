#include "fairgc/io.hpp"

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fairgc::io {

namespace fs = std::filesystem;

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file_atomic(const std::string& path, const std::string& content) {
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  fs::rename(tmp, target);
}

std::uint64_t file_hash(const std::string& path) {
  return fnv1a64(read_text_file(path));
}

bool file_exists(const std::string& path) { return fs::exists(path); }

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

CsvTable parse_csv(const std::string& text, const std::string& origin) {
  CsvTable table;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split_line(line);
    if (table.header.empty()) {
      table.header = std::move(fields);
      continue;
    }
    if (fields.size() != table.header.size())
      throw DataError(origin + ": row " + std::to_string(lineno) + " has " +
                      std::to_string(fields.size()) + " fields, expected " +
                      std::to_string(table.header.size()));
    table.rows.push_back(std::move(fields));
  }
  if (table.header.empty()) throw DataError(origin + ": empty CSV");
  return table;
}

double parse_real(const std::string& token, const std::string& origin, std::size_t row) {
  const char* s = token.c_str();
  char* end = nullptr;
  errno = 0;
  double v = std::strtod(s, &end);
  if (end == s || *end != '\0' || errno == ERANGE)
    throw DataError(origin + ": row " + std::to_string(row) +
                    ": not a number: '" + token + "'");
  return v;
}

long long parse_int(const std::string& token, const std::string& origin, std::size_t row) {
  const char* s = token.c_str();
  char* end = nullptr;
  errno = 0;
  long long v = std::strtoll(s, &end, 10);
  if (end == s || *end != '\0' || errno == ERANGE)
    throw DataError(origin + ": row " + std::to_string(row) +
                    ": not an integer: '" + token + "'");
  return v;
}

}  // namespace fairgc::io

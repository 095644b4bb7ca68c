#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fairgc/common.hpp"

namespace fairgc::io {

std::string read_text_file(const std::string& path);

// Writes via a temp file in the same directory, then renames into place.
void write_text_file_atomic(const std::string& path, const std::string& content);

std::uint64_t file_hash(const std::string& path);

bool file_exists(const std::string& path);

// Minimal CSV: comma-separated, header row, no quoting (numeric tables only).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;  // rows[i][j], sized per header

  // Index of a header column, -1 if absent.
  int column(const std::string& name) const;
};

CsvTable parse_csv(const std::string& text, const std::string& origin);

double parse_real(const std::string& token, const std::string& origin, std::size_t row);
long long parse_int(const std::string& token, const std::string& origin, std::size_t row);

}  // namespace fairgc::io

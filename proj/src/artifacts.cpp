#include "fairgc/artifacts.hpp"

#include <sstream>

namespace fairgc::io {

std::string tensor_csv_text(const num::Tensor2& t, const std::string& col_prefix) {
  std::ostringstream os;
  for (std::size_t j = 0; j < t.cols; ++j) {
    if (j) os << ',';
    os << col_prefix << j;
  }
  os << '\n';
  for (std::size_t i = 0; i < t.rows; ++i) {
    for (std::size_t j = 0; j < t.cols; ++j) {
      if (j) os << ',';
      os << format_real(t(i, j));
    }
    os << '\n';
  }
  return os.str();
}

void write_tensor_csv(const std::string& path, const num::Tensor2& t,
                      const std::string& col_prefix) {
  write_text_file_atomic(path, tensor_csv_text(t, col_prefix));
}

num::Tensor2 read_tensor_csv(const std::string& path) {
  const CsvTable table = parse_csv(read_text_file(path), path);
  num::Tensor2 t(table.rows.size(), table.header.size());
  for (std::size_t i = 0; i < t.rows; ++i)
    for (std::size_t j = 0; j < t.cols; ++j)
      t(i, j) = static_cast<real_t>(parse_real(table.rows[i][j], path, i + 2));
  return t;
}

}  // namespace fairgc::io

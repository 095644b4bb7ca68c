#pragma once

#include <string>

#include "fairgc/io.hpp"
#include "fairgc/tensor.hpp"

namespace fairgc::io {

// CSV with a generated header (prefix0..prefixN-1) and %.17g values, so a
// write/read roundtrip is bit-exact.
void write_tensor_csv(const std::string& path, const num::Tensor2& t,
                      const std::string& col_prefix = "c");
num::Tensor2 read_tensor_csv(const std::string& path);

std::string tensor_csv_text(const num::Tensor2& t, const std::string& col_prefix = "c");

}  // namespace fairgc::io

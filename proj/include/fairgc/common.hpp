#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fairgc {

#ifdef FAIRGC_SINGLE_PRECISION
using real_t = float;
#else
using real_t = double;
#endif

// Invalid configuration detected before any work starts. CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (schema, parse, integrity, undefined
// metric). CLI exit code 3.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failure (non-convergence, NaN loss, invalid spectrum). CLI exit
// code 4.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// FNV-1a 64-bit. Content hashing for artifact chaining and cache keys.
std::uint64_t fnv1a64(const void* data, std::size_t len,
                      std::uint64_t state = 14695981039346656037ull);
std::uint64_t fnv1a64(std::string_view s);
std::string hash_hex(std::uint64_t h);

// Shortest decimal form that round-trips a double (%.17g).
std::string format_real(double v);

}  // namespace fairgc

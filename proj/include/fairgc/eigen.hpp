#pragma once

#include <cstddef>
#include <vector>

#include "fairgc/tensor.hpp"

namespace fairgc::num {

enum class EigenWhich { Smallest, Largest };

struct EigenResult {
  std::vector<real_t> values;  // sorted ascending (Smallest) or descending (Largest)
  Tensor2 vectors;             // n×k, column i pairs with values[i]
  real_t off_norm;             // final off-diagonal Frobenius norm
  int sweeps;
};

// Cyclic Jacobi on the full matrix; selects k pairs after convergence.
// The condensed graphs this serves are small by construction, so a dense
// full decomposition is the straightforward route to an orthonormal basis.
EigenResult sym_eigen(const Tensor2& m, std::size_t k, EigenWhich which,
                      real_t sym_tol = 1e-8);

}  // namespace fairgc::num

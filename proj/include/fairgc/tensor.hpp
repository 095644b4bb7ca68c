#pragma once

#include <cstddef>
#include <vector>

#include "fairgc/common.hpp"

namespace fairgc::num {

// Dense row-major matrix, the carrier for every matrix in the pipeline.
// All kernels below are pure and use fixed loop orders, so identical inputs
// give bit-identical outputs.
struct Tensor2 {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<real_t> data;

  Tensor2() = default;
  Tensor2(std::size_t r, std::size_t c, real_t fill = 0)
      : rows(r), cols(c), data(r * c, fill) {}

  real_t& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  real_t operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }

  static Tensor2 identity(std::size_t n);
};

// Throws NumericError when any entry is NaN/Inf. Used at module boundaries.
void check_finite(const Tensor2& t, const char* what);

Tensor2 matmul(const Tensor2& a, const Tensor2& b);
Tensor2 transpose(const Tensor2& a);
Tensor2 add(const Tensor2& a, const Tensor2& b);
Tensor2 sub(const Tensor2& a, const Tensor2& b);
Tensor2 scale(const Tensor2& a, real_t s);
Tensor2 hadamard(const Tensor2& a, const Tensor2& b);
// a + broadcast of a 1×cols row (bias add).
Tensor2 add_row(const Tensor2& a, const Tensor2& row);
Tensor2 colsum(const Tensor2& a);  // 1×cols

Tensor2 rowwise_softmax(const Tensor2& a);
// d(sum_ij r_ij * softmax(a)_ij)/da given p = softmax(a) and upstream grad.
Tensor2 rowwise_softmax_backward(const Tensor2& grad, const Tensor2& p);

Tensor2 relu(const Tensor2& a);
Tensor2 relu_backward(const Tensor2& grad, const Tensor2& pre);

// Row-wise normalization to zero mean / unit variance with learned affine.
// gamma/beta are 1×cols. eps sits inside the sqrt.
struct LayerNormCache {
  Tensor2 xhat;                  // normalized pre-affine values
  std::vector<real_t> inv_std;   // per row
};
Tensor2 layer_norm(const Tensor2& x, const Tensor2& gamma, const Tensor2& beta,
                   real_t eps, LayerNormCache* cache = nullptr);
struct LayerNormGrads {
  Tensor2 dx, dgamma, dbeta;
};
LayerNormGrads layer_norm_backward(const Tensor2& dy, const LayerNormCache& cache,
                                   const Tensor2& gamma);

// Column-wise normalization over the batch (training mode).
struct BatchNormCache {
  Tensor2 xhat;
  std::vector<real_t> inv_std;  // per column
  std::vector<real_t> mean;     // per column (batch statistics)
  std::vector<real_t> var;
};
Tensor2 batch_norm_train(const Tensor2& x, const Tensor2& gamma, const Tensor2& beta,
                         real_t eps, BatchNormCache* cache = nullptr);
Tensor2 batch_norm_eval(const Tensor2& x, const Tensor2& gamma, const Tensor2& beta,
                        const std::vector<real_t>& running_mean,
                        const std::vector<real_t>& running_var, real_t eps);
struct BatchNormGrads {
  Tensor2 dx, dgamma, dbeta;
};
BatchNormGrads batch_norm_backward(const Tensor2& dy, const BatchNormCache& cache,
                                   const Tensor2& gamma);

}  // namespace fairgc::num

#include "fairgc/tensor.hpp"

#include <cmath>
#include <string>

namespace fairgc::num {

namespace {

void require_shape(bool ok, const char* what) {
  if (!ok) throw NumericError(std::string("dimension mismatch in ") + what);
}

}  // namespace

Tensor2 Tensor2::identity(std::size_t n) {
  Tensor2 t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1;
  return t;
}

void check_finite(const Tensor2& t, const char* what) {
  for (real_t v : t.data)
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite value in ") + what);
}

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  require_shape(a.cols == b.rows, "matmul");
  Tensor2 out(a.rows, b.cols);
  // ikj order: deterministic accumulation, decent locality.
  for (std::size_t i = 0; i < a.rows; ++i) {
    real_t* orow = &out.data[i * out.cols];
    for (std::size_t k = 0; k < a.cols; ++k) {
      const real_t aik = a(i, k);
      if (aik == 0) continue;
      const real_t* brow = &b.data[k * b.cols];
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Tensor2 transpose(const Tensor2& a) {
  Tensor2 out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
  return out;
}

Tensor2 add(const Tensor2& a, const Tensor2& b) {
  require_shape(a.same_shape(b), "add");
  Tensor2 out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
  return out;
}

Tensor2 sub(const Tensor2& a, const Tensor2& b) {
  require_shape(a.same_shape(b), "sub");
  Tensor2 out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.data[i];
  return out;
}

Tensor2 scale(const Tensor2& a, real_t s) {
  Tensor2 out = a;
  for (real_t& v : out.data) v *= s;
  return out;
}

Tensor2 hadamard(const Tensor2& a, const Tensor2& b) {
  require_shape(a.same_shape(b), "hadamard");
  Tensor2 out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.data[i];
  return out;
}

Tensor2 add_row(const Tensor2& a, const Tensor2& row) {
  require_shape(row.rows == 1 && row.cols == a.cols, "add_row");
  Tensor2 out = a;
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out(i, j) += row(0, j);
  return out;
}

Tensor2 colsum(const Tensor2& a) {
  Tensor2 out(1, a.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out(0, j) += a(i, j);
  return out;
}

Tensor2 rowwise_softmax(const Tensor2& a) {
  Tensor2 out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    real_t mx = a(i, 0);
    for (std::size_t j = 1; j < a.cols; ++j) mx = std::max(mx, a(i, j));
    real_t sum = 0;
    for (std::size_t j = 0; j < a.cols; ++j) {
      const real_t e = std::exp(a(i, j) - mx);
      out(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < a.cols; ++j) out(i, j) /= sum;
  }
  return out;
}

Tensor2 rowwise_softmax_backward(const Tensor2& grad, const Tensor2& p) {
  require_shape(grad.same_shape(p), "softmax_backward");
  Tensor2 out(p.rows, p.cols);
  for (std::size_t i = 0; i < p.rows; ++i) {
    real_t dot = 0;
    for (std::size_t j = 0; j < p.cols; ++j) dot += grad(i, j) * p(i, j);
    for (std::size_t j = 0; j < p.cols; ++j)
      out(i, j) = p(i, j) * (grad(i, j) - dot);
  }
  return out;
}

Tensor2 relu(const Tensor2& a) {
  Tensor2 out = a;
  for (real_t& v : out.data)
    if (v < 0) v = 0;
  return out;
}

Tensor2 relu_backward(const Tensor2& grad, const Tensor2& pre) {
  require_shape(grad.same_shape(pre), "relu_backward");
  Tensor2 out = grad;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (pre.data[i] <= 0) out.data[i] = 0;
  return out;
}

Tensor2 layer_norm(const Tensor2& x, const Tensor2& gamma, const Tensor2& beta,
                   real_t eps, LayerNormCache* cache) {
  require_shape(gamma.rows == 1 && gamma.cols == x.cols, "layer_norm gamma");
  require_shape(beta.rows == 1 && beta.cols == x.cols, "layer_norm beta");
  Tensor2 out(x.rows, x.cols);
  Tensor2 xhat(x.rows, x.cols);
  std::vector<real_t> inv_std(x.rows);
  const real_t n = static_cast<real_t>(x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    real_t mean = 0;
    for (std::size_t j = 0; j < x.cols; ++j) mean += x(i, j);
    mean /= n;
    real_t var = 0;
    for (std::size_t j = 0; j < x.cols; ++j) {
      const real_t d = x(i, j) - mean;
      var += d * d;
    }
    var /= n;
    const real_t is = real_t(1) / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < x.cols; ++j) {
      const real_t h = (x(i, j) - mean) * is;
      xhat(i, j) = h;
      out(i, j) = gamma(0, j) * h + beta(0, j);
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

LayerNormGrads layer_norm_backward(const Tensor2& dy, const LayerNormCache& cache,
                                   const Tensor2& gamma) {
  const Tensor2& xhat = cache.xhat;
  require_shape(dy.same_shape(xhat), "layer_norm_backward");
  LayerNormGrads g;
  g.dx = Tensor2(dy.rows, dy.cols);
  g.dgamma = Tensor2(1, dy.cols);
  g.dbeta = Tensor2(1, dy.cols);
  const real_t n = static_cast<real_t>(dy.cols);
  for (std::size_t i = 0; i < dy.rows; ++i) {
    real_t sum_dxhat = 0, sum_dxhat_xhat = 0;
    for (std::size_t j = 0; j < dy.cols; ++j) {
      const real_t d = dy(i, j);
      g.dgamma(0, j) += d * xhat(i, j);
      g.dbeta(0, j) += d;
      const real_t dxh = d * gamma(0, j);
      sum_dxhat += dxh;
      sum_dxhat_xhat += dxh * xhat(i, j);
    }
    const real_t is = cache.inv_std[i];
    for (std::size_t j = 0; j < dy.cols; ++j) {
      const real_t dxh = dy(i, j) * gamma(0, j);
      g.dx(i, j) = is * (dxh - sum_dxhat / n - xhat(i, j) * sum_dxhat_xhat / n);
    }
  }
  return g;
}

Tensor2 batch_norm_train(const Tensor2& x, const Tensor2& gamma, const Tensor2& beta,
                         real_t eps, BatchNormCache* cache) {
  require_shape(gamma.rows == 1 && gamma.cols == x.cols, "batch_norm gamma");
  require_shape(beta.rows == 1 && beta.cols == x.cols, "batch_norm beta");
  const std::size_t m = x.rows;
  require_shape(m >= 1, "batch_norm batch");
  Tensor2 out(x.rows, x.cols);
  Tensor2 xhat(x.rows, x.cols);
  std::vector<real_t> mean(x.cols, 0), var(x.cols, 0), inv_std(x.cols);
  for (std::size_t j = 0; j < x.cols; ++j) {
    real_t mu = 0;
    for (std::size_t i = 0; i < m; ++i) mu += x(i, j);
    mu /= static_cast<real_t>(m);
    real_t v = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const real_t d = x(i, j) - mu;
      v += d * d;
    }
    v /= static_cast<real_t>(m);
    mean[j] = mu;
    var[j] = v;
    inv_std[j] = real_t(1) / std::sqrt(v + eps);
  }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) {
      const real_t h = (x(i, j) - mean[j]) * inv_std[j];
      xhat(i, j) = h;
      out(i, j) = gamma(0, j) * h + beta(0, j);
    }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->mean = std::move(mean);
    cache->var = std::move(var);
  }
  return out;
}

Tensor2 batch_norm_eval(const Tensor2& x, const Tensor2& gamma, const Tensor2& beta,
                        const std::vector<real_t>& running_mean,
                        const std::vector<real_t>& running_var, real_t eps) {
  require_shape(running_mean.size() == x.cols && running_var.size() == x.cols,
                "batch_norm_eval stats");
  Tensor2 out(x.rows, x.cols);
  for (std::size_t j = 0; j < x.cols; ++j) {
    const real_t is = real_t(1) / std::sqrt(running_var[j] + eps);
    for (std::size_t i = 0; i < x.rows; ++i)
      out(i, j) = gamma(0, j) * ((x(i, j) - running_mean[j]) * is) + beta(0, j);
  }
  return out;
}

BatchNormGrads batch_norm_backward(const Tensor2& dy, const BatchNormCache& cache,
                                   const Tensor2& gamma) {
  const Tensor2& xhat = cache.xhat;
  require_shape(dy.same_shape(xhat), "batch_norm_backward");
  BatchNormGrads g;
  g.dx = Tensor2(dy.rows, dy.cols);
  g.dgamma = Tensor2(1, dy.cols);
  g.dbeta = Tensor2(1, dy.cols);
  const real_t m = static_cast<real_t>(dy.rows);
  for (std::size_t j = 0; j < dy.cols; ++j) {
    real_t sum_dxhat = 0, sum_dxhat_xhat = 0;
    for (std::size_t i = 0; i < dy.rows; ++i) {
      const real_t d = dy(i, j);
      g.dgamma(0, j) += d * xhat(i, j);
      g.dbeta(0, j) += d;
      const real_t dxh = d * gamma(0, j);
      sum_dxhat += dxh;
      sum_dxhat_xhat += dxh * xhat(i, j);
    }
    const real_t is = cache.inv_std[j];
    for (std::size_t i = 0; i < dy.rows; ++i) {
      const real_t dxh = dy(i, j) * gamma(0, j);
      g.dx(i, j) = is * (dxh - sum_dxhat / m - xhat(i, j) * sum_dxhat_xhat / m);
    }
  }
  return g;
}

}  // namespace fairgc::num

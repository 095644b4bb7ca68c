#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "fairgc/common.hpp"
#include "fairgc/eigen.hpp"
#include "fairgc/optim.hpp"
#include "fairgc/tensor.hpp"
#include "test_util.hpp"

using namespace fairgc;
using testutil::make_rng;
using testutil::random_tensor;

TEST_CASE("fnv1a64 matches published test vectors") {
  CHECK(fnv1a64(std::string_view("")) == 14695981039346656037ull);
  CHECK(fnv1a64(std::string_view("a")) == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64(std::string_view("foobar")) == 0x85944171f73967e8ull);
  // Chaining equals hashing the concatenation.
  const std::uint64_t chained = fnv1a64("bar", 3, fnv1a64(std::string_view("foo")));
  CHECK(chained == fnv1a64(std::string_view("foobar")));
}

TEST_CASE("format_real round-trips doubles bit-exactly") {
  auto rng = make_rng(11);
  std::uniform_real_distribution<double> dist(-1e6, 1e6);
  for (int i = 0; i < 200; ++i) {
    const double v = dist(rng) * std::pow(10.0, i % 7 - 3);
    CHECK(std::stod(format_real(v)) == v);
  }
  CHECK(std::stod(format_real(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("matmul agrees with a naive triple loop") {
  auto rng = make_rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const num::Tensor2 a = random_tensor(rng, 7, 5);
    const num::Tensor2 b = random_tensor(rng, 5, 9);
    const num::Tensor2 c = num::matmul(a, b);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 9; ++j) {
        real_t acc = 0;
        for (std::size_t k = 0; k < 5; ++k) acc += a(i, k) * b(k, j);
        CHECK(std::abs(c(i, j) - acc) < 1e-12);
      }
  }
  CHECK_THROWS_AS(num::matmul(random_tensor(rng, 2, 3), random_tensor(rng, 4, 2)),
                  NumericError);
}

TEST_CASE("elementwise kernels") {
  auto rng = make_rng(13);
  const num::Tensor2 a = random_tensor(rng, 4, 3), b = random_tensor(rng, 4, 3);
  const num::Tensor2 sum = num::add(a, b), diff = num::sub(a, b);
  const num::Tensor2 prod = num::hadamard(a, b), twice = num::scale(a, 2);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    CHECK(sum.data[i] == a.data[i] + b.data[i]);
    CHECK(diff.data[i] == a.data[i] - b.data[i]);
    CHECK(prod.data[i] == a.data[i] * b.data[i]);
    CHECK(twice.data[i] == 2 * a.data[i]);
  }
  const num::Tensor2 t = num::transpose(a);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) CHECK(t(j, i) == a(i, j));
  const num::Tensor2 row = random_tensor(rng, 1, 3);
  const num::Tensor2 biased = num::add_row(a, row);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j)
      CHECK(biased(i, j) == a(i, j) + row(0, j));
  const num::Tensor2 cs = num::colsum(a);
  for (std::size_t j = 0; j < a.cols; ++j) {
    real_t acc = 0;
    for (std::size_t i = 0; i < a.rows; ++i) acc += a(i, j);
    CHECK(std::abs(cs(0, j) - acc) < 1e-14);
  }
}

TEST_CASE("check_finite flags NaN and Inf") {
  num::Tensor2 t(2, 2, 1);
  CHECK_NOTHROW(num::check_finite(t, "t"));
  t(1, 1) = std::numeric_limits<real_t>::quiet_NaN();
  CHECK_THROWS_AS(num::check_finite(t, "t"), NumericError);
  t(1, 1) = std::numeric_limits<real_t>::infinity();
  CHECK_THROWS_AS(num::check_finite(t, "t"), NumericError);
}

TEST_CASE("rowwise softmax: normalization, shift invariance, oracle") {
  auto rng = make_rng(14);
  const num::Tensor2 a = random_tensor(rng, 6, 5, -4, 4);
  const num::Tensor2 p = num::rowwise_softmax(a);
  for (std::size_t i = 0; i < a.rows; ++i) {
    real_t sum = 0;
    real_t mx = a(i, 0);
    for (std::size_t j = 0; j < a.cols; ++j) mx = std::max(mx, a(i, j));
    for (std::size_t j = 0; j < a.cols; ++j) sum += p(i, j);
    CHECK(std::abs(sum - 1) < 1e-12);
    real_t z = 0;
    for (std::size_t j = 0; j < a.cols; ++j) z += std::exp(a(i, j) - mx);
    for (std::size_t j = 0; j < a.cols; ++j)
      CHECK(std::abs(p(i, j) - std::exp(a(i, j) - mx) / z) < 1e-14);
  }
  num::Tensor2 shifted = a;
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) shifted(i, j) += 100;
  CHECK(testutil::max_abs_diff(num::rowwise_softmax(shifted), p) < 1e-12);
}

TEST_CASE("softmax backward matches finite differences") {
  auto rng = make_rng(15);
  num::Tensor2 logits = random_tensor(rng, 3, 4);
  const num::Tensor2 w = random_tensor(rng, 3, 4);
  auto loss_of = [&](const num::Tensor2& x) {
    const num::Tensor2 p = num::rowwise_softmax(x);
    real_t s = 0;
    for (std::size_t i = 0; i < p.data.size(); ++i) s += w.data[i] * p.data[i];
    return s;
  };
  const num::Tensor2 grad =
      num::rowwise_softmax_backward(w, num::rowwise_softmax(logits));
  const real_t eps = 1e-6;
  for (std::size_t i = 0; i < logits.data.size(); ++i) {
    num::Tensor2 hi = logits, lo = logits;
    hi.data[i] += eps;
    lo.data[i] -= eps;
    const real_t fd = (loss_of(hi) - loss_of(lo)) / (2 * eps);
    CHECK(std::abs(grad.data[i] - fd) < 1e-7);
  }
}

TEST_CASE("relu and its backward") {
  num::Tensor2 x(1, 4);
  x(0, 0) = -2;
  x(0, 1) = 0;
  x(0, 2) = 0.5;
  x(0, 3) = 3;
  const num::Tensor2 y = num::relu(x);
  CHECK(y(0, 0) == 0);
  CHECK(y(0, 1) == 0);
  CHECK(y(0, 2) == real_t(0.5));
  CHECK(y(0, 3) == 3);
  num::Tensor2 g(1, 4, 1);
  const num::Tensor2 dx = num::relu_backward(g, x);
  CHECK(dx(0, 0) == 0);
  CHECK(dx(0, 1) == 0);
  CHECK(dx(0, 2) == 1);
  CHECK(dx(0, 3) == 1);
}

TEST_CASE("layer norm forward statistics and gradients") {
  auto rng = make_rng(16);
  const num::Tensor2 x = random_tensor(rng, 5, 8, -2, 2);
  const num::Tensor2 gamma = random_tensor(rng, 1, 8, 0.5, 1.5);
  const num::Tensor2 beta = random_tensor(rng, 1, 8);
  num::LayerNormCache cache;
  const num::Tensor2 y = num::layer_norm(x, gamma, beta, 1e-12, &cache);
  for (std::size_t i = 0; i < x.rows; ++i) {
    real_t mean = 0, var = 0;
    for (std::size_t j = 0; j < x.cols; ++j) mean += cache.xhat(i, j);
    mean /= static_cast<real_t>(x.cols);
    for (std::size_t j = 0; j < x.cols; ++j) {
      const real_t d = cache.xhat(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<real_t>(x.cols);
    CHECK(std::abs(mean) < 1e-12);
    CHECK(std::abs(var - 1) < 1e-9);
    for (std::size_t j = 0; j < x.cols; ++j)
      CHECK(std::abs(y(i, j) - (gamma(0, j) * cache.xhat(i, j) + beta(0, j))) <
            1e-12);
  }

  // Gradient check through a scalar projection of the output.
  const num::Tensor2 w = random_tensor(rng, 5, 8);
  num::ParamBlock px("x", x), pg("gamma", gamma), pb("beta", beta);
  std::vector<num::ParamBlock*> params = {&px, &pg, &pb};
  auto loss = [&] {
    const num::Tensor2 out = num::layer_norm(px.value, pg.value, pb.value, 1e-12);
    real_t s = 0;
    for (std::size_t i = 0; i < out.data.size(); ++i) s += w.data[i] * out.data[i];
    return s;
  };
  auto grads = [&] {
    for (auto* p : params) p->zero_grad();
    num::LayerNormCache c;
    num::layer_norm(px.value, pg.value, pb.value, 1e-12, &c);
    num::LayerNormGrads g = num::layer_norm_backward(w, c, pg.value);
    px.grad = g.dx;
    pg.grad = g.dgamma;
    pb.grad = g.dbeta;
  };
  const num::GradCheckReport rep = num::grad_check(loss, grads, params);
  CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("batch norm: train statistics, eval path, gradients") {
  auto rng = make_rng(17);
  const num::Tensor2 x = random_tensor(rng, 9, 4, -3, 3);
  const num::Tensor2 gamma = random_tensor(rng, 1, 4, 0.5, 1.5);
  const num::Tensor2 beta = random_tensor(rng, 1, 4);
  num::BatchNormCache cache;
  const num::Tensor2 y = num::batch_norm_train(x, gamma, beta, 1e-12, &cache);
  for (std::size_t j = 0; j < x.cols; ++j) {
    real_t mean = 0;
    for (std::size_t i = 0; i < x.rows; ++i) mean += x(i, j);
    mean /= static_cast<real_t>(x.rows);
    CHECK(std::abs(cache.mean[j] - mean) < 1e-12);
    real_t var = 0;
    for (std::size_t i = 0; i < x.rows; ++i) {
      const real_t d = x(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<real_t>(x.rows);
    CHECK(std::abs(cache.var[j] - var) < 1e-12);
  }
  // Eval with the batch statistics reproduces the train output.
  const num::Tensor2 ye =
      num::batch_norm_eval(x, gamma, beta, cache.mean, cache.var, 1e-12);
  CHECK(testutil::max_abs_diff(y, ye) < 1e-12);

  const num::Tensor2 w = random_tensor(rng, 9, 4);
  num::ParamBlock px("x", x), pg("gamma", gamma), pb("beta", beta);
  std::vector<num::ParamBlock*> params = {&px, &pg, &pb};
  auto loss = [&] {
    const num::Tensor2 out = num::batch_norm_train(px.value, pg.value, pb.value, 1e-12);
    real_t s = 0;
    for (std::size_t i = 0; i < out.data.size(); ++i) s += w.data[i] * out.data[i];
    return s;
  };
  auto grads = [&] {
    for (auto* p : params) p->zero_grad();
    num::BatchNormCache c;
    num::batch_norm_train(px.value, pg.value, pb.value, 1e-12, &c);
    num::BatchNormGrads g = num::batch_norm_backward(w, c, pg.value);
    px.grad = g.dx;
    pg.grad = g.dgamma;
    pb.grad = g.dbeta;
  };
  CHECK(num::grad_check(loss, grads, params).max_rel_error < 1e-6);
}

namespace {

// Scalar Adam/AdamW recurrences, written out longhand.
struct ScalarAdam {
  double m = 0, v = 0;
  int t = 0;
  double step(double theta, double g, double lr, double b1, double b2, double eps,
              double wd, bool decoupled) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    double next = theta - lr * mhat / (std::sqrt(vhat) + eps);
    if (decoupled) next -= lr * wd * theta;
    return next;
  }
};

}  // namespace

TEST_CASE("Adam matches the scalar recurrence, including clipping") {
  num::OptimizerConfig cfg;
  cfg.lr = 0.05;
  cfg.clip_norm = 1.0;
  num::ParamBlock p("p", num::Tensor2(1, 1));
  p.value(0, 0) = 0.7;
  num::AdamOptimizer opt(num::AdamOptimizer::Mode::Adam, cfg);
  ScalarAdam oracle;
  double theta = 0.7;
  auto rng = make_rng(18);
  std::uniform_real_distribution<double> dist(-3, 3);
  for (int step = 0; step < 25; ++step) {
    const double g = dist(rng);
    p.zero_grad();
    p.grad(0, 0) = g;
    std::vector<num::ParamBlock*> ps = {&p};
    opt.step(ps);
    // Global norm here is |g|; clip rescales to norm 1 when above it.
    const double eff = std::abs(g) > cfg.clip_norm ? g / std::abs(g) : g;
    theta = oracle.step(theta, eff, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, 0, false);
    CHECK(std::abs(p.value(0, 0) - theta) < 1e-12);
  }
}

TEST_CASE("global-norm clip spans blocks: norm 10 with clip 1 scales by 0.1") {
  num::OptimizerConfig cfg;
  cfg.lr = 1.0;
  cfg.clip_norm = 1.0;
  num::ParamBlock a("a", num::Tensor2(1, 1)), b("b", num::Tensor2(1, 1));
  a.grad(0, 0) = 6;
  b.grad(0, 0) = 8;  // global norm 10
  num::AdamOptimizer opt(num::AdamOptimizer::Mode::Adam, cfg);
  std::vector<num::ParamBlock*> ps = {&a, &b};
  opt.step(ps);
  ScalarAdam oa, ob;
  CHECK(std::abs(a.value(0, 0) - oa.step(0, 0.6, 1, cfg.beta1, cfg.beta2, cfg.eps,
                                         0, false)) < 1e-12);
  CHECK(std::abs(b.value(0, 0) - ob.step(0, 0.8, 1, cfg.beta1, cfg.beta2, cfg.eps,
                                         0, false)) < 1e-12);
}

TEST_CASE("AdamW applies decoupled weight decay and no clipping") {
  num::OptimizerConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.02;
  num::ParamBlock p("p", num::Tensor2(1, 1));
  p.value(0, 0) = 2.0;
  num::AdamOptimizer opt(num::AdamOptimizer::Mode::AdamW, cfg);
  ScalarAdam oracle;
  double theta = 2.0;
  for (int step = 0; step < 10; ++step) {
    const double g = 5.0;  // would be clipped if the Adam path applied
    p.zero_grad();
    p.grad(0, 0) = g;
    std::vector<num::ParamBlock*> ps = {&p};
    opt.step(ps);
    theta = oracle.step(theta, g, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps,
                        cfg.weight_decay, true);
    CHECK(std::abs(p.value(0, 0) - theta) < 1e-12);
  }
}

TEST_CASE("cosine schedule closed form and clamp") {
  const real_t lo = 1e-5, hi = 1e-3;
  for (long t = 0; t <= 310; ++t) {
    const real_t got = num::cosine_lr(t, 300, hi, lo);
    const real_t want =
        t >= 300 ? lo
                 : lo + real_t(0.5) * (hi - lo) *
                            (1 + std::cos(M_PI * static_cast<real_t>(t) / 300));
    CHECK(std::abs(got - want) < 1e-12);
  }
  CHECK(num::cosine_lr(0, 300, hi, lo) == doctest::Approx(hi).epsilon(1e-12));
}

TEST_CASE("grad_check flags wrong gradients and accepts right ones") {
  num::ParamBlock p("p", num::Tensor2(1, 3));
  p.value(0, 0) = 0.3;
  p.value(0, 1) = -0.8;
  p.value(0, 2) = 1.2;
  auto loss = [&] {
    real_t s = 0;
    for (real_t v : p.value.data) s += v * v * v;
    return s;
  };
  auto right = [&] {
    for (std::size_t i = 0; i < 3; ++i)
      p.grad.data[i] = 3 * p.value.data[i] * p.value.data[i];
  };
  auto wrong = [&] {
    for (std::size_t i = 0; i < 3; ++i) p.grad.data[i] = p.value.data[i];
  };
  std::vector<num::ParamBlock*> ps = {&p};
  CHECK(num::grad_check(loss, right, ps).max_rel_error < 1e-7);
  CHECK(num::grad_check(loss, wrong, ps).max_rel_error > 0.1);
}

TEST_CASE("Jacobi eigensolver on random symmetric matrices") {
  auto rng = make_rng(19);
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t n = 3 + static_cast<std::size_t>(trial);
    num::Tensor2 m = random_tensor(rng, n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < i; ++j) m(i, j) = m(j, i);
    const num::EigenResult res = num::sym_eigen(m, n, num::EigenWhich::Smallest);
    REQUIRE(res.values.size() == n);
    // Ascending order.
    for (std::size_t i = 1; i < n; ++i) CHECK(res.values[i - 1] <= res.values[i]);
    // Residual M U = U diag(lambda).
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < n; ++i) {
        real_t mu = 0;
        for (std::size_t j = 0; j < n; ++j) mu += m(i, j) * res.vectors(j, k);
        CHECK(std::abs(mu - res.values[k] * res.vectors(i, k)) < 1e-8);
      }
    // Orthonormal columns.
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) {
        real_t dot = 0;
        for (std::size_t i = 0; i < n; ++i)
          dot += res.vectors(i, a) * res.vectors(i, b);
        CHECK(std::abs(dot - (a == b ? 1 : 0)) < 1e-9);
      }
  }
}

TEST_CASE("eigensolver k-selection and largest mode") {
  auto rng = make_rng(20);
  const std::size_t n = 8;
  num::Tensor2 m = random_tensor(rng, n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) m(i, j) = m(j, i);
  const num::EigenResult small = num::sym_eigen(m, 3, num::EigenWhich::Smallest);
  const num::EigenResult large = num::sym_eigen(m, 3, num::EigenWhich::Largest);
  const num::EigenResult full = num::sym_eigen(m, n, num::EigenWhich::Smallest);
  REQUIRE(small.values.size() == 3);
  REQUIRE(large.values.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::abs(small.values[i] - full.values[i]) < 1e-10);
    CHECK(std::abs(large.values[i] - full.values[n - 1 - i]) < 1e-10);
  }
  CHECK_THROWS_AS(num::sym_eigen(m, 0, num::EigenWhich::Smallest), NumericError);
  CHECK_THROWS_AS(num::sym_eigen(m, n + 1, num::EigenWhich::Smallest), NumericError);
}

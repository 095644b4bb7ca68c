#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "fairgc/io.hpp"
#include "fairgc/spectral.hpp"
#include "test_util.hpp"

using namespace fairgc;
using testutil::make_rng;
using testutil::random_tensor;
using testutil::TempDir;

TEST_CASE("normalized_laplacian: hand-checked small graphs") {
  // Single edge: L = [[1,-1],[-1,1]].
  num::Tensor2 p2(2, 2);
  p2(0, 1) = p2(1, 0) = 1;
  const num::Tensor2 l2 = spectral::normalized_laplacian(p2);
  CHECK(l2(0, 0) == 1);
  CHECK(l2(1, 1) == 1);
  CHECK(l2(0, 1) == -1);
  CHECK(l2(1, 0) == -1);

  // Triangle: off-diagonal entries -1/2, eigenvalues {0, 3/2, 3/2}.
  num::Tensor2 k3(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) k3(i, j) = 1;
  const num::Tensor2 l3 = spectral::normalized_laplacian(k3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(std::abs(l3(i, j) - (i == j ? 1.0 : -0.5)) < 1e-15);
  const spectral::SpectralBasis b3 = spectral::spectral_basis(l3, 3);
  CHECK(std::abs(b3.eigenvalues[0] - 0.0) < 1e-10);
  CHECK(std::abs(b3.eigenvalues[1] - 1.5) < 1e-10);
  CHECK(std::abs(b3.eigenvalues[2] - 1.5) < 1e-10);

  // Isolated node: its whole Laplacian row/column stays zero.
  num::Tensor2 iso(3, 3);
  iso(0, 1) = iso(1, 0) = 0.5;
  const num::Tensor2 li = spectral::normalized_laplacian(iso);
  for (int j = 0; j < 3; ++j) {
    CHECK(li(2, j) == 0);
    CHECK(li(j, 2) == 0);
  }
  CHECK(li(0, 0) == 1);
  CHECK(std::abs(li(0, 1) + 1) < 1e-15);
}

TEST_CASE("normalized_laplacian: input validation") {
  CHECK_THROWS_AS(spectral::normalized_laplacian(num::Tensor2(2, 3)), NumericError);

  num::Tensor2 diag(2, 2);
  diag(0, 0) = 1;
  CHECK_THROWS_AS(spectral::normalized_laplacian(diag), NumericError);

  num::Tensor2 asym(2, 2);
  asym(0, 1) = 1;
  asym(1, 0) = 0.5;
  CHECK_THROWS_AS(spectral::normalized_laplacian(asym), NumericError);

  num::Tensor2 neg(2, 2);
  neg(0, 1) = neg(1, 0) = -0.3;
  CHECK_THROWS_AS(spectral::normalized_laplacian(neg), NumericError);
}

TEST_CASE("spectral_basis properties over random weighted graphs") {
  auto rng = make_rng(71);
  std::uniform_real_distribution<real_t> weight(0.5, 1.0);
  std::uniform_real_distribution<real_t> unit(0.0, 1.0);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 8 + rng() % 25;
    const std::size_t ncomp = 1 + rng() % 4;
    std::vector<std::size_t> part(n);
    for (auto& p : part) p = rng() % ncomp;

    num::Tensor2 a(n, n);
    bool any_edge = false;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (part[i] == part[j] && unit(rng) < 0.4) {
          a(i, j) = a(j, i) = weight(rng);
          any_edge = true;
        }
    if (!any_edge) a(0, 1) = a(1, 0) = 0.7;

    // Connected components straight from the realized edge set.
    testutil::UnionFind uf(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (a(i, j) > 0) uf.unite(i, j);

    const num::Tensor2 l = spectral::normalized_laplacian(a);
    const spectral::SpectralBasis basis = spectral::spectral_basis(l, n);
    REQUIRE(basis.eigenvalues.size() == n);

    for (real_t v : basis.eigenvalues) {
      CHECK(v >= -1e-9);
      CHECK(v <= 2 + 1e-9);
    }
    for (std::size_t i = 1; i < n; ++i)
      CHECK(basis.eigenvalues[i - 1] <= basis.eigenvalues[i]);

    // Orthonormal columns.
    const num::Tensor2& u = basis.eigenvectors;
    for (std::size_t c1 = 0; c1 < n; ++c1)
      for (std::size_t c2 = c1; c2 < n; ++c2) {
        real_t dot = 0;
        for (std::size_t r = 0; r < n; ++r) dot += u(r, c1) * u(r, c2);
        CHECK(std::abs(dot - (c1 == c2 ? 1 : 0)) < 1e-8);
      }

    // Zero-eigenvalue multiplicity equals the connected-component count
    // (isolated nodes contribute their zero rows).
    std::size_t zeros = 0;
    for (real_t v : basis.eigenvalues)
      if (std::abs(v) < 1e-7) ++zeros;
    CHECK(zeros == uf.components());

    // Full-K reconstruction: U diag(lambda) U^T recovers L.
    real_t err2 = 0, lnorm2 = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        real_t rec = 0;
        for (std::size_t c = 0; c < n; ++c)
          rec += u(i, c) * basis.eigenvalues[c] * u(j, c);
        const real_t d = rec - l(i, j);
        err2 += d * d;
        lnorm2 += l(i, j) * l(i, j);
      }
    CHECK(std::sqrt(err2) < 1e-8 * std::sqrt(lnorm2));

    CHECK(basis.laplacian_residual < 1e-8);

    // Canonical signs: largest-magnitude entry of every column positive.
    for (std::size_t c = 0; c < n; ++c) {
      real_t best = -1, entry = 0;
      for (std::size_t r = 0; r < n; ++r)
        if (std::abs(u(r, c)) > best) {
          best = std::abs(u(r, c));
          entry = u(r, c);
        }
      CHECK(entry > 0);
    }
  }
}

TEST_CASE("spectral_basis: k selection and bounds") {
  auto rng = make_rng(72);
  num::Tensor2 a(6, 6);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = i + 1; j < 6; ++j)
      if ((i + j) % 2 == 0) a(i, j) = a(j, i) = 0.8;
  const num::Tensor2 l = spectral::normalized_laplacian(a);
  const spectral::SpectralBasis all = spectral::spectral_basis(l, 6);
  const spectral::SpectralBasis low = spectral::spectral_basis(l, 2);
  CHECK(low.eigenvalues[0] == all.eigenvalues[0]);
  CHECK(low.eigenvalues[1] == all.eigenvalues[1]);
  const spectral::SpectralBasis high =
      spectral::spectral_basis(l, 2, num::EigenWhich::Largest);
  CHECK(high.eigenvalues[0] == all.eigenvalues[5]);
  CHECK(high.eigenvalues[0] >= high.eigenvalues[1]);
  CHECK_THROWS_AS(spectral::spectral_basis(l, 0), ConfigError);
  CHECK_THROWS_AS(spectral::spectral_basis(l, 7), ConfigError);
}

TEST_CASE("sinusoidal_encode: identity, exact values, validation") {
  auto rng = make_rng(73);
  std::uniform_real_distribution<real_t> lam(0.0, 2.0);
  for (std::size_t d_enc : {2u, 4u, 8u, 64u}) {
    std::vector<real_t> values;
    for (int i = 0; i < 50; ++i) values.push_back(lam(rng));
    const num::Tensor2 e0 = spectral::sinusoidal_encode(values, d_enc);
    REQUIRE(e0.rows == values.size());
    REQUIRE(e0.cols == d_enc);
    for (std::size_t i = 0; i < e0.rows; ++i)
      for (std::size_t j = 0; 2 * j < d_enc; ++j) {
        const real_t s = e0(i, 2 * j), c = e0(i, 2 * j + 1);
        CHECK(std::abs(s * s + c * c - 1) <= 1e-12);
      }
  }

  // lambda = 0 encodes to exact (0, 1) pairs.
  const num::Tensor2 zero = spectral::sinusoidal_encode({0.0}, 6);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(zero(0, 2 * j) == 0);
    CHECK(zero(0, 2 * j + 1) == 1);
  }

  // Hand-computed entry: d_enc=4, j=1 divides by 10000^(2/4) = 100.
  const num::Tensor2 one = spectral::sinusoidal_encode({1.5}, 4);
  CHECK(one(0, 0) == std::sin(1.5));
  CHECK(one(0, 1) == std::cos(1.5));
  CHECK(std::abs(one(0, 2) - std::sin(1.5 / 100)) < 1e-15);
  CHECK(std::abs(one(0, 3) - std::cos(1.5 / 100)) < 1e-15);

  CHECK_THROWS_AS(spectral::sinusoidal_encode({1.0}, 3), ConfigError);
  CHECK_THROWS_AS(spectral::sinusoidal_encode({1.0}, 0), ConfigError);
}

TEST_CASE("encoder parameter validation") {
  CHECK_THROWS_AS(spectral::SpectralEncoderParams(5, 1, 0), ConfigError);
  CHECK_THROWS_AS(spectral::SpectralEncoderParams(8, 3, 0), ConfigError);
  CHECK_THROWS_AS(spectral::SpectralEncoderParams(8, 0, 0), ConfigError);
  spectral::SpectralEncoderParams ok(8, 2, 0);
  CHECK(ok.params().size() == 16);
}

namespace {

// Plain-loop layer norm matching the library's epsilon convention.
num::Tensor2 oracle_ln(const num::Tensor2& x, const num::Tensor2& gamma,
                       const num::Tensor2& beta) {
  num::Tensor2 out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    real_t mean = 0, var = 0;
    for (std::size_t j = 0; j < x.cols; ++j) mean += x(i, j);
    mean /= static_cast<real_t>(x.cols);
    for (std::size_t j = 0; j < x.cols; ++j) {
      const real_t d = x(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<real_t>(x.cols);
    const real_t inv = real_t(1) / std::sqrt(var + 1e-12);
    for (std::size_t j = 0; j < x.cols; ++j)
      out(i, j) = gamma(0, j) * (x(i, j) - mean) * inv + beta(0, j);
  }
  return out;
}

num::Tensor2 oracle_affine(const num::Tensor2& x, const num::Tensor2& w,
                           const num::Tensor2& b) {
  num::Tensor2 out(x.rows, w.cols);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < w.cols; ++j) {
      real_t acc = b(0, j);
      for (std::size_t t = 0; t < x.cols; ++t) acc += x(i, t) * w(t, j);
      out(i, j) = acc;
    }
  return out;
}

num::Tensor2 oracle_mhsa(const num::Tensor2& e0,
                         const spectral::SpectralEncoderParams& p) {
  const std::size_t K = e0.rows, d = p.d_enc, h = p.heads, dh = d / h;
  const num::Tensor2 q = oracle_affine(e0, p.wq.value, p.bq.value);
  const num::Tensor2 k = oracle_affine(e0, p.wk.value, p.bk.value);
  const num::Tensor2 v = oracle_affine(e0, p.wv.value, p.bv.value);
  const real_t alpha = real_t(1) / std::sqrt(static_cast<real_t>(dh));
  num::Tensor2 concat(K, d);
  for (std::size_t head = 0; head < h; ++head) {
    const std::size_t c0 = head * dh;
    for (std::size_t i = 0; i < K; ++i) {
      std::vector<real_t> scores(K);
      real_t mx = -std::numeric_limits<real_t>::infinity();
      for (std::size_t j = 0; j < K; ++j) {
        real_t dot = 0;
        for (std::size_t t = 0; t < dh; ++t)
          dot += q(i, c0 + t) * k(j, c0 + t);
        scores[j] = alpha * dot;
        mx = std::max(mx, scores[j]);
      }
      real_t z = 0;
      for (std::size_t j = 0; j < K; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        z += scores[j];
      }
      for (std::size_t j = 0; j < K; ++j)
        for (std::size_t t = 0; t < dh; ++t)
          concat(i, c0 + t) += scores[j] / z * v(j, c0 + t);
    }
  }
  return oracle_affine(concat, p.wo.value, p.bo.value);
}

}  // namespace

TEST_CASE("mhsa_forward matches a plain-loop oracle") {
  auto rng = make_rng(74);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t K = 3 + trial;
    spectral::SpectralEncoderParams p(8, trial % 2 ? 4 : 2, 100 + trial);
    const num::Tensor2 e0 = random_tensor(rng, K, 8);
    const num::Tensor2 got = spectral::mhsa_forward(e0, p);
    const num::Tensor2 want = oracle_mhsa(e0, p);
    CHECK(testutil::max_abs_diff(got, want) < 1e-12);
  }
  spectral::SpectralEncoderParams p(8, 2, 0);
  CHECK_THROWS_AS(spectral::mhsa_forward(random_tensor(rng, 3, 6), p), NumericError);
}

TEST_CASE("refine_encodings composes attention, FFN and post-norms") {
  auto rng = make_rng(75);
  spectral::SpectralEncoderParams p(8, 2, 7);
  const num::Tensor2 e0 = random_tensor(rng, 5, 8);
  const num::Tensor2 got = spectral::refine_encodings(e0, p);

  num::Tensor2 sum1 = oracle_mhsa(e0, p);
  for (std::size_t i = 0; i < sum1.rows; ++i)
    for (std::size_t j = 0; j < sum1.cols; ++j) sum1(i, j) += e0(i, j);
  const num::Tensor2 eprime = oracle_ln(sum1, p.ln1_gamma.value, p.ln1_beta.value);
  num::Tensor2 hidden = oracle_affine(eprime, p.wf1.value, p.bf1.value);
  for (real_t& v : hidden.data) v = std::max(v, real_t(0));
  num::Tensor2 sum2 = oracle_affine(hidden, p.wf2.value, p.bf2.value);
  for (std::size_t i = 0; i < sum2.rows; ++i)
    for (std::size_t j = 0; j < sum2.cols; ++j) sum2(i, j) += eprime(i, j);
  const num::Tensor2 want = oracle_ln(sum2, p.ln2_gamma.value, p.ln2_beta.value);

  CHECK(testutil::max_abs_diff(got, want) < 1e-9);
  CHECK_THROWS_AS(spectral::refine_encodings(num::Tensor2(), p), NumericError);
}

TEST_CASE("refine_backward passes finite differences") {
  auto rng = make_rng(76);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    spectral::SpectralEncoderParams p(8, 2, 300 + seed);
    num::ParamBlock e0("e0", random_tensor(rng, 4, 8));
    const num::Tensor2 w = random_tensor(rng, 4, 8);

    std::vector<num::ParamBlock*> params = {&e0};
    for (num::ParamBlock* b : p.params()) params.push_back(b);

    auto loss = [&] {
      const num::Tensor2 out = spectral::refine_encodings(e0.value, p);
      real_t acc = 0;
      for (std::size_t i = 0; i < out.data.size(); ++i)
        acc += w.data[i] * out.data[i];
      return acc;
    };
    auto grads = [&] {
      for (auto* b : params) b->zero_grad();
      spectral::RefineCache cache;
      spectral::refine_encodings(e0.value, p, &cache);
      e0.grad = spectral::refine_backward(w, cache, p);
    };
    const num::GradCheckReport rep = num::grad_check(loss, grads, params);
    CHECK(rep.max_rel_error < 1e-4);
  }
}

TEST_CASE("project_to_nodes multiplies the basis into the encodings") {
  auto rng = make_rng(77);
  num::Tensor2 a(5, 5);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = i + 1; j < 5; ++j)
      if ((i * 5 + j) % 3 == 0) a(i, j) = a(j, i) = 0.9;
  const spectral::SpectralBasis basis =
      spectral::spectral_basis(spectral::normalized_laplacian(a), 5);
  const num::Tensor2 e = random_tensor(rng, 5, 4);
  const num::Tensor2 z = spectral::project_to_nodes(basis, e);
  REQUIRE(z.rows == 5);
  REQUIRE(z.cols == 4);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      real_t acc = 0;
      for (std::size_t c = 0; c < 5; ++c)
        acc += basis.eigenvectors(i, c) * e(c, j);
      CHECK(std::abs(z(i, j) - acc) < 1e-12);
    }
  CHECK_THROWS_AS(spectral::project_to_nodes(basis, random_tensor(rng, 3, 4)),
                  NumericError);
}

TEST_CASE("basis persistence round-trips bit-exactly") {
  num::Tensor2 a(6, 6);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = i + 1; j < 6; ++j)
      if ((i + 2 * j) % 3 != 0) a(i, j) = a(j, i) = 0.4 + 0.1 * i;
  spectral::SpectralBasis basis =
      spectral::spectral_basis(spectral::normalized_laplacian(a), 4);
  basis.source_hash = 0xdeadbeefcafef00dULL;

  TempDir tmp("basis_rt");
  spectral::save_basis(basis, tmp.str());
  const spectral::SpectralBasis back = spectral::load_basis(tmp.str());
  CHECK(back.K == basis.K);
  CHECK(back.which == basis.which);
  CHECK(back.source_hash == basis.source_hash);
  CHECK(back.eigenvalues == basis.eigenvalues);
  CHECK(testutil::max_abs_diff(back.eigenvectors, basis.eigenvectors) == 0);
  CHECK(back.laplacian_residual == basis.laplacian_residual);

  SUBCASE("tampered eigenvectors fail the manifest check") {
    std::string text = io::read_text_file(tmp.sub("eigenvectors.csv"));
    text[text.size() / 2] = text[text.size() / 2] == '3' ? '4' : '3';
    io::write_text_file_atomic(tmp.sub("eigenvectors.csv"), text);
    CHECK(testutil::throws_with<DataError>(
        [&] { spectral::load_basis(tmp.str()); }, "does not match manifest hash"));
  }

  SUBCASE("missing manifest fails loading") {
    std::filesystem::remove(tmp.sub("manifest.json"));
    CHECK_THROWS_AS(spectral::load_basis(tmp.str()), DataError);
  }
}

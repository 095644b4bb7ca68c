#include "fairgc/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fairgc/artifacts.hpp"
#include "fairgc/io.hpp"
#include "json.hpp"

namespace fairgc::spectral {

namespace {

using nlohmann::json;

constexpr real_t kLnEps = 1e-12;

num::Tensor2 col_slice(const num::Tensor2& t, std::size_t c0, std::size_t c1) {
  num::Tensor2 out(t.rows, c1 - c0);
  for (std::size_t i = 0; i < t.rows; ++i)
    for (std::size_t j = c0; j < c1; ++j) out(i, j - c0) = t(i, j);
  return out;
}

void add_col_slice(num::Tensor2& dst, const num::Tensor2& src, std::size_t c0) {
  for (std::size_t i = 0; i < src.rows; ++i)
    for (std::size_t j = 0; j < src.cols; ++j) dst(i, c0 + j) += src(i, j);
}

num::Tensor2 mhsa(const num::Tensor2& e0, const SpectralEncoderParams& p,
                  RefineCache* cache) {
  const std::size_t d = p.d_enc, h = p.heads, dh = d / h;
  num::Tensor2 q = num::add_row(num::matmul(e0, p.wq.value), p.bq.value);
  num::Tensor2 k = num::add_row(num::matmul(e0, p.wk.value), p.bk.value);
  num::Tensor2 v = num::add_row(num::matmul(e0, p.wv.value), p.bv.value);
  const real_t alpha = real_t(1) / std::sqrt(static_cast<real_t>(dh));
  num::Tensor2 concat(e0.rows, d);
  std::vector<num::Tensor2> probs;
  probs.reserve(h);
  for (std::size_t head = 0; head < h; ++head) {
    const std::size_t c0 = head * dh, c1 = c0 + dh;
    num::Tensor2 qh = col_slice(q, c0, c1);
    num::Tensor2 kh = col_slice(k, c0, c1);
    num::Tensor2 vh = col_slice(v, c0, c1);
    num::Tensor2 scores = num::scale(num::matmul(qh, num::transpose(kh)), alpha);
    num::check_finite(scores, "attention logits");
    num::Tensor2 ph = num::rowwise_softmax(scores);
    num::Tensor2 oh = num::matmul(ph, vh);
    add_col_slice(concat, oh, c0);
    probs.push_back(std::move(ph));
  }
  num::Tensor2 out = num::add_row(num::matmul(concat, p.wo.value), p.bo.value);
  if (cache) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->attn_p = std::move(probs);
    cache->attn_concat = std::move(concat);
  }
  return out;
}

}  // namespace

num::Tensor2 normalized_laplacian(const num::Tensor2& a) {
  const std::size_t n = a.rows;
  if (a.cols != n) throw NumericError("normalized_laplacian: matrix not square");
  num::check_finite(a, "normalized_laplacian input");
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(a(i, i)) > 1e-12)
      throw NumericError("normalized_laplacian: nonzero diagonal");
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(a(i, j) - a(j, i)) > 1e-12)
        throw NumericError("normalized_laplacian: adjacency not symmetric");
      if (a(i, j) < -1e-12)
        throw NumericError("normalized_laplacian: negative edge weight");
    }
  }
  std::vector<real_t> inv_sqrt(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    real_t deg = 0;
    for (std::size_t j = 0; j < n; ++j) deg += a(i, j);
    // Isolated node: the unit self-loop convention makes its row of L zero.
    inv_sqrt[i] = deg > 0 ? real_t(1) / std::sqrt(deg) : real_t(0);
  }
  num::Tensor2 l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    if (inv_sqrt[i] == 0) continue;  // whole row stays zero
    l(i, i) = 1;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (inv_sqrt[j] == 0) continue;
      const real_t w = -a(i, j) * (inv_sqrt[i] * inv_sqrt[j]);
      l(i, j) = w;
      l(j, i) = w;
    }
  }
  return l;
}

SpectralBasis spectral_basis(const num::Tensor2& laplacian, std::size_t K,
                             num::EigenWhich which) {
  if (K < 1 || K > laplacian.rows)
    throw ConfigError("spectral_basis: K must lie in [1, n_syn]");
  num::EigenResult eig = num::sym_eigen(laplacian, K, which);
  for (real_t v : eig.values)
    if (v < -1e-8 || v > 2 + 1e-8)
      throw NumericError("spectral_basis: eigenvalue " + format_real(v) +
                         " outside the normalized-Laplacian range [0, 2]");
  // Canonical signs: the largest-magnitude entry of each column positive.
  for (std::size_t c = 0; c < K; ++c) {
    std::size_t arg = 0;
    real_t best = -1;
    for (std::size_t r = 0; r < eig.vectors.rows; ++r) {
      const real_t m = std::abs(eig.vectors(r, c));
      if (m > best) {
        best = m;
        arg = r;
      }
    }
    if (eig.vectors(arg, c) < 0)
      for (std::size_t r = 0; r < eig.vectors.rows; ++r)
        eig.vectors(r, c) = -eig.vectors(r, c);
  }
  SpectralBasis basis;
  basis.K = K;
  basis.which = which;
  basis.eigenvalues = std::move(eig.values);
  basis.eigenvectors = std::move(eig.vectors);
  const num::Tensor2 lu = num::matmul(laplacian, basis.eigenvectors);
  real_t residual = 0;
  for (std::size_t i = 0; i < lu.rows; ++i)
    for (std::size_t c = 0; c < K; ++c)
      residual = std::max(residual,
                          std::abs(lu(i, c) - basis.eigenvectors(i, c) *
                                                  basis.eigenvalues[c]));
  basis.laplacian_residual = residual;
  return basis;
}

num::Tensor2 sinusoidal_encode(const std::vector<real_t>& eigenvalues,
                               std::size_t d_enc) {
  if (d_enc == 0 || d_enc % 2 != 0)
    throw ConfigError("sinusoidal_encode: d_enc must be even and positive");
  num::Tensor2 e0(eigenvalues.size(), d_enc);
  for (std::size_t i = 0; i < eigenvalues.size(); ++i)
    for (std::size_t j = 0; 2 * j < d_enc; ++j) {
      const real_t denom =
          std::pow(real_t(10000), real_t(2 * j) / static_cast<real_t>(d_enc));
      const real_t arg = eigenvalues[i] / denom;
      e0(i, 2 * j) = std::sin(arg);
      e0(i, 2 * j + 1) = std::cos(arg);
    }
  return e0;
}

SpectralEncoderParams::SpectralEncoderParams(std::size_t d_enc_, std::size_t heads_,
                                             std::uint64_t seed)
    : d_enc(d_enc_), heads(heads_) {
  if (d_enc == 0 || d_enc % 2 != 0)
    throw ConfigError("spectral encoder: d_enc must be even and positive");
  if (heads == 0 || d_enc % heads != 0)
    throw ConfigError("spectral encoder: head count must divide d_enc");
  std::mt19937_64 rng(seed);
  auto init = [&rng](const char* name, std::size_t r, std::size_t c,
                     std::size_t fan_in) {
    num::Tensor2 t(r, c);
    const real_t bound = real_t(1) / std::sqrt(static_cast<real_t>(fan_in));
    std::uniform_real_distribution<real_t> dist(-bound, bound);
    for (real_t& v : t.data) v = dist(rng);
    return num::ParamBlock(name, std::move(t));
  };
  wq = init("enc.wq", d_enc, d_enc, d_enc);
  wk = init("enc.wk", d_enc, d_enc, d_enc);
  wv = init("enc.wv", d_enc, d_enc, d_enc);
  wo = init("enc.wo", d_enc, d_enc, d_enc);
  bq = num::ParamBlock("enc.bq", num::Tensor2(1, d_enc));
  bk = num::ParamBlock("enc.bk", num::Tensor2(1, d_enc));
  bv = num::ParamBlock("enc.bv", num::Tensor2(1, d_enc));
  bo = num::ParamBlock("enc.bo", num::Tensor2(1, d_enc));
  ln1_gamma = num::ParamBlock("enc.ln1_gamma", num::Tensor2(1, d_enc, 1));
  ln1_beta = num::ParamBlock("enc.ln1_beta", num::Tensor2(1, d_enc));
  ln2_gamma = num::ParamBlock("enc.ln2_gamma", num::Tensor2(1, d_enc, 1));
  ln2_beta = num::ParamBlock("enc.ln2_beta", num::Tensor2(1, d_enc));
  wf1 = init("enc.wf1", d_enc, 4 * d_enc, d_enc);
  bf1 = num::ParamBlock("enc.bf1", num::Tensor2(1, 4 * d_enc));
  wf2 = init("enc.wf2", 4 * d_enc, d_enc, 4 * d_enc);
  bf2 = num::ParamBlock("enc.bf2", num::Tensor2(1, d_enc));
}

std::vector<num::ParamBlock*> SpectralEncoderParams::params() {
  return {&wq, &wk, &wv, &wo, &bq, &bk, &bv, &bo,
          &ln1_gamma, &ln1_beta, &ln2_gamma, &ln2_beta,
          &wf1, &bf1, &wf2, &bf2};
}

std::vector<const num::ParamBlock*> SpectralEncoderParams::params() const {
  return {&wq, &wk, &wv, &wo, &bq, &bk, &bv, &bo,
          &ln1_gamma, &ln1_beta, &ln2_gamma, &ln2_beta,
          &wf1, &bf1, &wf2, &bf2};
}

num::Tensor2 mhsa_forward(const num::Tensor2& e0, const SpectralEncoderParams& p) {
  if (e0.cols != p.d_enc)
    throw NumericError("dimension mismatch in attention input");
  return mhsa(e0, p, nullptr);
}

num::Tensor2 refine_encodings(const num::Tensor2& e0, const SpectralEncoderParams& p,
                              RefineCache* cache) {
  if (e0.cols != p.d_enc || e0.rows == 0)
    throw NumericError("dimension mismatch in refine_encodings");
  RefineCache local;
  RefineCache* c = cache ? cache : &local;
  c->e0 = e0;
  num::Tensor2 attn_out = mhsa(e0, p, c);
  c->sum1 = num::add(e0, attn_out);
  c->eprime = num::layer_norm(c->sum1, p.ln1_gamma.value, p.ln1_beta.value, kLnEps,
                              &c->ln1);
  c->ffn_pre = num::add_row(num::matmul(c->eprime, p.wf1.value), p.bf1.value);
  c->ffn_hidden = num::relu(c->ffn_pre);
  num::Tensor2 ffn_out =
      num::add_row(num::matmul(c->ffn_hidden, p.wf2.value), p.bf2.value);
  c->sum2 = num::add(c->eprime, ffn_out);
  return num::layer_norm(c->sum2, p.ln2_gamma.value, p.ln2_beta.value, kLnEps,
                         &c->ln2);
}

num::Tensor2 refine_backward(const num::Tensor2& de, const RefineCache& cache,
                             SpectralEncoderParams& p) {
  const std::size_t d = p.d_enc, h = p.heads, dh = d / h;
  const real_t alpha = real_t(1) / std::sqrt(static_cast<real_t>(dh));

  num::LayerNormGrads ln2g = num::layer_norm_backward(de, cache.ln2, p.ln2_gamma.value);
  p.ln2_gamma.grad = num::add(p.ln2_gamma.grad, ln2g.dgamma);
  p.ln2_beta.grad = num::add(p.ln2_beta.grad, ln2g.dbeta);
  num::Tensor2 deprime = ln2g.dx;  // residual branch
  const num::Tensor2& dffn_out = ln2g.dx;

  p.wf2.grad = num::add(p.wf2.grad,
                        num::matmul(num::transpose(cache.ffn_hidden), dffn_out));
  p.bf2.grad = num::add(p.bf2.grad, num::colsum(dffn_out));
  num::Tensor2 dffn_hidden = num::matmul(dffn_out, num::transpose(p.wf2.value));
  num::Tensor2 dffn_pre = num::relu_backward(dffn_hidden, cache.ffn_pre);
  p.wf1.grad = num::add(p.wf1.grad,
                        num::matmul(num::transpose(cache.eprime), dffn_pre));
  p.bf1.grad = num::add(p.bf1.grad, num::colsum(dffn_pre));
  deprime = num::add(deprime, num::matmul(dffn_pre, num::transpose(p.wf1.value)));

  num::LayerNormGrads ln1g =
      num::layer_norm_backward(deprime, cache.ln1, p.ln1_gamma.value);
  p.ln1_gamma.grad = num::add(p.ln1_gamma.grad, ln1g.dgamma);
  p.ln1_beta.grad = num::add(p.ln1_beta.grad, ln1g.dbeta);
  num::Tensor2 de0 = ln1g.dx;  // residual branch
  const num::Tensor2& dattn = ln1g.dx;

  p.wo.grad = num::add(p.wo.grad,
                       num::matmul(num::transpose(cache.attn_concat), dattn));
  p.bo.grad = num::add(p.bo.grad, num::colsum(dattn));
  num::Tensor2 dconcat = num::matmul(dattn, num::transpose(p.wo.value));

  num::Tensor2 dq(cache.q.rows, d), dk(cache.k.rows, d), dv(cache.v.rows, d);
  for (std::size_t head = 0; head < h; ++head) {
    const std::size_t c0 = head * dh, c1 = c0 + dh;
    num::Tensor2 doh = col_slice(dconcat, c0, c1);
    num::Tensor2 qh = col_slice(cache.q, c0, c1);
    num::Tensor2 kh = col_slice(cache.k, c0, c1);
    num::Tensor2 vh = col_slice(cache.v, c0, c1);
    const num::Tensor2& ph = cache.attn_p[head];
    num::Tensor2 dph = num::matmul(doh, num::transpose(vh));
    num::Tensor2 dvh = num::matmul(num::transpose(ph), doh);
    num::Tensor2 ds = num::rowwise_softmax_backward(dph, ph);
    num::Tensor2 dqh = num::scale(num::matmul(ds, kh), alpha);
    num::Tensor2 dkh = num::scale(num::matmul(num::transpose(ds), qh), alpha);
    add_col_slice(dq, dqh, c0);
    add_col_slice(dk, dkh, c0);
    add_col_slice(dv, dvh, c0);
  }
  p.wq.grad = num::add(p.wq.grad, num::matmul(num::transpose(cache.e0), dq));
  p.bq.grad = num::add(p.bq.grad, num::colsum(dq));
  p.wk.grad = num::add(p.wk.grad, num::matmul(num::transpose(cache.e0), dk));
  p.bk.grad = num::add(p.bk.grad, num::colsum(dk));
  p.wv.grad = num::add(p.wv.grad, num::matmul(num::transpose(cache.e0), dv));
  p.bv.grad = num::add(p.bv.grad, num::colsum(dv));
  de0 = num::add(de0, num::matmul(dq, num::transpose(p.wq.value)));
  de0 = num::add(de0, num::matmul(dk, num::transpose(p.wk.value)));
  de0 = num::add(de0, num::matmul(dv, num::transpose(p.wv.value)));
  return de0;
}

num::Tensor2 project_to_nodes(const SpectralBasis& basis, const num::Tensor2& e) {
  if (e.rows != basis.K || basis.eigenvectors.cols != basis.K)
    throw NumericError("project_to_nodes: encoding row count must equal K");
  return num::matmul(basis.eigenvectors, e);
}

void save_basis(const SpectralBasis& basis, const std::string& dir) {
  num::Tensor2 vals(basis.K, 1);
  for (std::size_t i = 0; i < basis.K; ++i) vals(i, 0) = basis.eigenvalues[i];
  const std::string values_text = io::tensor_csv_text(vals, "lambda");
  const std::string vectors_text = io::tensor_csv_text(basis.eigenvectors, "u");

  json manifest;
  manifest["type"] = "spectral_basis";
  manifest["format_version"] = 1;
  manifest["k"] = basis.K;
  manifest["n"] = basis.eigenvectors.rows;
  manifest["which"] =
      basis.which == num::EigenWhich::Smallest ? "smallest" : "largest";
  manifest["source_hash"] = hash_hex(basis.source_hash);
  manifest["laplacian_residual"] = basis.laplacian_residual;
  manifest["files"] = {{"eigenvalues.csv", hash_hex(fnv1a64(values_text))},
                       {"eigenvectors.csv", hash_hex(fnv1a64(vectors_text))}};

  io::write_text_file_atomic(dir + "/eigenvalues.csv", values_text);
  io::write_text_file_atomic(dir + "/eigenvectors.csv", vectors_text);
  io::write_text_file_atomic(dir + "/manifest.json", manifest.dump(2) + "\n");
}

SpectralBasis load_basis(const std::string& dir) {
  json manifest;
  try {
    manifest = json::parse(io::read_text_file(dir + "/manifest.json"));
  } catch (const json::exception& e) {
    throw DataError(dir + "/manifest.json: " + e.what());
  }
  SpectralBasis basis;
  try {
    for (const auto& [name, hash] : manifest.at("files").items()) {
      const std::string text = io::read_text_file(dir + "/" + name);
      if (hash_hex(fnv1a64(text)) != hash.get<std::string>())
        throw DataError(dir + "/" + name + ": content does not match manifest hash");
    }
    basis.K = manifest.at("k").get<std::size_t>();
    basis.which = manifest.at("which").get<std::string>() == "largest"
                      ? num::EigenWhich::Largest
                      : num::EigenWhich::Smallest;
    basis.source_hash =
        std::stoull(manifest.at("source_hash").get<std::string>(), nullptr, 16);
    basis.laplacian_residual = manifest.at("laplacian_residual").get<real_t>();
  } catch (const json::exception& e) {
    throw DataError(dir + "/manifest.json: " + e.what());
  }
  num::Tensor2 vals = io::read_tensor_csv(dir + "/eigenvalues.csv");
  basis.eigenvectors = io::read_tensor_csv(dir + "/eigenvectors.csv");
  if (vals.rows != basis.K || vals.cols != 1 || basis.eigenvectors.cols != basis.K)
    throw DataError(dir + ": basis shape does not match manifest");
  basis.eigenvalues.resize(basis.K);
  for (std::size_t i = 0; i < basis.K; ++i) basis.eigenvalues[i] = vals(i, 0);
  return basis;
}

}  // namespace fairgc::spectral

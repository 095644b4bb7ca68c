#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fairgc/eigen.hpp"
#include "fairgc/optim.hpp"
#include "fairgc/tensor.hpp"

namespace fairgc::spectral {

// Eigenpairs of the condensed graph's normalized Laplacian. Eigenvector signs
// are canonicalized (largest-magnitude entry positive) so seeded runs are
// byte-reproducible despite the inherent sign ambiguity.
struct SpectralBasis {
  std::vector<real_t> eigenvalues;  // ascending (Smallest) or descending (Largest)
  num::Tensor2 eigenvectors;        // n_syn × K
  std::size_t K = 0;
  real_t laplacian_residual = 0;    // max |L U - U diag(lambda)|
  num::EigenWhich which = num::EigenWhich::Smallest;
  std::uint64_t source_hash = 0;    // condensed-graph content hash, 0 when ad hoc
};

// L = I - D^{-1/2} A D^{-1/2}. Isolated nodes take a unit self-loop before D
// is formed, which zeroes their entire row.
num::Tensor2 normalized_laplacian(const num::Tensor2& a);

SpectralBasis spectral_basis(const num::Tensor2& laplacian, std::size_t K,
                             num::EigenWhich which = num::EigenWhich::Smallest);

// E0[i,2j] = sin(lambda_i / 10000^(2j/d_enc)), E0[i,2j+1] = cos(same).
num::Tensor2 sinusoidal_encode(const std::vector<real_t>& eigenvalues,
                               std::size_t d_enc);

// Post-norm transformer block over the K frequency tokens: one multi-head
// self-attention sublayer and one FFN sublayer (expansion 4, ReLU), each with
// a residual connection and layer norm.
struct SpectralEncoderParams {
  std::size_t d_enc = 0, heads = 0;
  num::ParamBlock wq, wk, wv, wo, bq, bk, bv, bo;
  num::ParamBlock ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  num::ParamBlock wf1, bf1, wf2, bf2;

  SpectralEncoderParams() = default;
  SpectralEncoderParams(std::size_t d_enc, std::size_t heads, std::uint64_t seed);
  std::vector<num::ParamBlock*> params();
  std::vector<const num::ParamBlock*> params() const;
};

struct RefineCache {
  num::Tensor2 e0, q, k, v;
  std::vector<num::Tensor2> attn_p;  // per-head softmax probabilities, K×K
  num::Tensor2 attn_concat;          // head outputs before the output projection
  num::Tensor2 sum1;                 // e0 + attention sublayer output
  num::LayerNormCache ln1;
  num::Tensor2 eprime;
  num::Tensor2 ffn_pre;              // pre-ReLU hidden, K×4d
  num::Tensor2 ffn_hidden;
  num::Tensor2 sum2;
  num::LayerNormCache ln2;
};

// Attention sublayer alone (exposed for direct verification).
num::Tensor2 mhsa_forward(const num::Tensor2& e0, const SpectralEncoderParams& p);

num::Tensor2 refine_encodings(const num::Tensor2& e0, const SpectralEncoderParams& p,
                              RefineCache* cache = nullptr);
// Returns dE0 and accumulates parameter grads.
num::Tensor2 refine_backward(const num::Tensor2& de, const RefineCache& cache,
                             SpectralEncoderParams& p);

// Z_spec = U E.
num::Tensor2 project_to_nodes(const SpectralBasis& basis, const num::Tensor2& e);

// Disk cache keyed by the condensed graph's content hash.
void save_basis(const SpectralBasis& basis, const std::string& dir);
SpectralBasis load_basis(const std::string& dir);

}  // namespace fairgc::spectral

#pragma once

#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "fairgc/graph.hpp"
#include "fairgc/optim.hpp"
#include "fairgc/tensor.hpp"

namespace fairgc::condense {

// Synthetic surrogate graph plus the provenance needed to audit it and to
// chain later phases against its exact content.
struct CondensedGraph {
  std::size_t num_syn = 0;
  num::Tensor2 features;       // n_syn × d
  std::vector<int> labels;     // per-node class
  std::vector<int> sensitive;  // per-node group
  num::Tensor2 adjacency;      // dense symmetric, zero diagonal, entries in [0,1]
  // Union kNN pairs (a < b, sorted); kept so zero-weight neighbor links
  // survive persistence.
  std::vector<std::tuple<std::uint32_t, std::uint32_t, real_t>> edges;
  std::size_t num_classes = 0;
  std::size_t num_groups = 0;

  std::uint64_t seed = 0;
  double rho = 0;
  graph::DistributionStats source_stats;
  // Z-score statistics of the sampled block; evaluation maps original
  // features into the same standardized space with these.
  std::vector<real_t> feature_mean, feature_std;
  std::size_t knn_k = 0;
  bool sparse_track = false;
  std::vector<real_t> loss_trace;
  std::size_t distill_best_step = 0;
  std::vector<std::string> notes;

  // Hash over everything downstream training consumes: counts, labels,
  // sensitive, features, edges, Z-score stats.
  std::uint64_t content_hash() const;
};

// n_syn = max(10, floor(rho * n)).
std::size_t compute_budget(std::size_t n, double rho);

struct Allocation {
  std::vector<int> labels;
  std::vector<int> sensitive;
  num::Tensor2 joint_counts;  // C×S integer counts
  std::vector<std::string> notes;
};

// Largest-remainder apportionment of classes and groups; remainders resolved
// by seeded weighted draws. joint_mode additionally distributes joint cells
// so that both marginals are met exactly; otherwise labels and groups are
// apportioned independently and paired by a seeded shuffle.
Allocation allocate_attributes(const graph::DistributionStats& stats,
                               std::size_t n_syn, std::uint64_t seed,
                               bool joint_mode = true);

struct InitResult {
  num::Tensor2 features;                  // Z-scored sampled block
  std::vector<std::uint32_t> source_rows; // sampled original node indices
  std::vector<real_t> mean, stddev;       // per feature, over the sampled block
  std::vector<std::string> notes;
};

// Samples a matching training node per synthetic node (without replacement
// until the cell is exhausted), then Z-scores the sampled block.
InitResult init_features(const graph::Graph& g, const std::vector<int>& syn_labels,
                         const std::vector<int>& syn_sensitive, std::uint64_t seed);

// Two-layer perceptron input -> hidden -> classes, ReLU hidden activation.
struct ProxyNet {
  std::size_t input_dim = 0, hidden = 0, num_classes = 0;
  num::ParamBlock w1, b1, w2, b2;

  ProxyNet(std::size_t input_dim, std::size_t hidden, std::size_t num_classes,
           std::uint64_t seed);
  std::vector<num::ParamBlock*> params();
};

// Mean negative log-likelihood of labels under the proxy's log-softmax.
real_t proxy_loss(const ProxyNet& net, const num::Tensor2& x,
                  const std::vector<int>& labels);
// Same value; additionally accumulates parameter grads and, when dx is
// non-null, writes the input gradient.
real_t proxy_loss_grad(ProxyNet& net, const num::Tensor2& x,
                       const std::vector<int>& labels, num::Tensor2* dx);

struct DistillResult {
  num::Tensor2 features;  // snapshot at the lowest recorded loss
  std::vector<real_t> loss_trace;
  std::size_t best_step = 0;
  std::vector<std::string> notes;
};

// Joint Adam (global-norm clipped) over the synthetic features and the proxy
// parameters. The trace holds one loss per step, evaluated before that
// step's update.
DistillResult distill_features(const num::Tensor2& x0, const std::vector<int>& labels,
                               ProxyNet& proxy, std::size_t steps, double lr,
                               double clip);

struct AdjacencyOptions {
  std::size_t k_sparse = 5;
  std::size_t k_dense = 0;  // 0: max(10, ceil(source_mean_degree))
  double source_mean_degree = 0;
  std::size_t sparse_threshold = 20000;
};

struct Adjacency {
  num::Tensor2 matrix;
  std::vector<std::tuple<std::uint32_t, std::uint32_t, real_t>> edges;  // a<b, sorted
  std::size_t k_used = 0;
  bool sparse_track = false;
  std::vector<std::string> notes;
};

// Cosine-similarity kNN, symmetrized by union; weights clamp to [0,1].
Adjacency build_adjacency(const num::Tensor2& x, const AdjacencyOptions& opts = {});

// Persistence: manifest.json + features.csv + nodes.csv + edges.txt. Loading
// re-verifies per-file hashes and the content hash recorded in the manifest.
void save_condensed(const CondensedGraph& cg, const std::string& dir);
CondensedGraph load_condensed(const std::string& dir);

}  // namespace fairgc::condense

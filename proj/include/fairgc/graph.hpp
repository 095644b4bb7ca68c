#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fairgc/tensor.hpp"

namespace fairgc::graph {

struct NodeTableSchema {
  std::string id_column = "id";
  std::string label_column = "label";
  std::string sensitive_column = "sensitive";
  // Empty: every remaining column, in header order.
  std::vector<std::string> feature_columns;
};

// Attributed undirected graph with dense node ids 0..n-1. Edges are stored
// canonically (a < b, sorted, deduplicated); the implied adjacency is
// symmetric by construction.
struct Graph {
  std::size_t num_nodes = 0;
  num::Tensor2 features;             // n×d
  std::vector<int> labels;           // in {0..num_classes-1}
  std::vector<int> sensitive;        // in {0..num_groups-1}
  std::size_t num_classes = 0;
  std::size_t num_groups = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  std::vector<std::uint32_t> train_idx, val_idx, test_idx;
  std::vector<std::int64_t> original_ids;  // dense id -> source id
  std::vector<std::string> notes;          // warnings recorded at load/split

  double mean_degree() const {
    return num_nodes == 0 ? 0.0 : 2.0 * static_cast<double>(edges.size()) /
                                       static_cast<double>(num_nodes);
  }
};

// Empirical proportions over the training split only.
struct DistributionStats {
  std::vector<real_t> class_props;   // p_c, sums to 1
  std::vector<real_t> group_props;   // q_a, sums to 1
  num::Tensor2 joint_props;          // C×S, sums to 1
  std::size_t train_count = 0;
};

Graph load_graph(const std::string& node_table_path,
                 const std::string& edge_list_path,
                 const NodeTableSchema& schema = {});

struct SplitFractions {
  double train = 0.5, val = 0.25, test = 0.25;
};

// Stratified by (label, sensitive) cell, deterministic for a fixed seed.
Graph split_graph(const Graph& g, SplitFractions fractions, std::uint64_t seed);

// Overrides splits from a CSV of (id, split_name); ids are source ids.
void apply_split_file(Graph& g, const std::string& path);

DistributionStats empirical_stats(const Graph& g);

}  // namespace fairgc::graph

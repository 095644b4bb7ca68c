#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fairgc/condenser.hpp"
#include "fairgc/graph.hpp"
#include "fairgc/tensor.hpp"

namespace fairgc::metrics {

// Fraction of exact label matches.
real_t accuracy(const std::vector<int>& predicted, const std::vector<int>& actual);

// Maps raw sensitive values onto the binary groups the parity metrics need.
// partition[v] in {0,1} for every observed value; an empty partition is the
// identity and requires the values themselves to be binary already.
std::vector<int> binarize_groups(const std::vector<int>& sensitive,
                                 const std::vector<int>& partition);

// |P(yhat = positive | s=0) - P(yhat = positive | s=1)|. Undefined metrics
// raise DataError; a silent zero would fake fairness.
real_t delta_sp(const std::vector<int>& predicted, const std::vector<int>& groups,
                int positive_class);

// |TPR_0 - TPR_1| over nodes whose actual label is the positive class.
real_t delta_eo(const std::vector<int>& predicted, const std::vector<int>& actual,
                const std::vector<int>& groups, int positive_class);

struct FairnessReport {
  real_t accuracy = 0;
  real_t delta_sp = 0;
  real_t delta_eo = 0;
  int positive_class = 1;
  std::vector<int> group_partition;            // resolved mapping, value -> {0,1}
  std::array<std::size_t, 2> group_counts{0, 0};
  std::vector<num::Tensor2> group_tables;      // per group: actual × predicted counts
  std::size_t sample_count = 0;

  std::string to_json() const;
};

FairnessReport evaluate_predictions(const std::vector<int>& predicted,
                                    const std::vector<int>& actual,
                                    const std::vector<int>& sensitive,
                                    int positive_class,
                                    const std::vector<int>& partition = {});

// Distribution drift between the source training split and the condensed
// graph. Marginal gaps above 1/n_syn are flagged; joint gaps are reported
// but carry no hard bound.
struct DriftTable {
  std::vector<real_t> class_gaps;
  std::vector<real_t> group_gaps;
  num::Tensor2 joint_gaps;
  real_t bound = 0;  // 1/n_syn
  real_t max_marginal_gap = 0;
  std::vector<std::string> violations;

  std::string render() const;
  std::string to_json() const;
};

DriftTable audit_condensation(const graph::Graph& g,
                              const condense::CondensedGraph& cg);

}  // namespace fairgc::metrics

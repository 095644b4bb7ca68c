#include "fairgc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace fairgc::metrics {

namespace {

using nlohmann::json;

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw DataError(std::string(what) + ": input length mismatch");
  if (a == 0) throw DataError(std::string(what) + ": empty input");
}

}  // namespace

real_t accuracy(const std::vector<int>& predicted, const std::vector<int>& actual) {
  check_lengths(predicted.size(), actual.size(), "accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    if (predicted[i] == actual[i]) ++hits;
  return static_cast<real_t>(hits) / static_cast<real_t>(predicted.size());
}

std::vector<int> binarize_groups(const std::vector<int>& sensitive,
                                 const std::vector<int>& partition) {
  std::vector<int> out(sensitive.size());
  for (std::size_t i = 0; i < sensitive.size(); ++i) {
    const int v = sensitive[i];
    if (v < 0) throw DataError("binarize_groups: negative sensitive value");
    int g;
    if (partition.empty()) {
      if (v > 1)
        throw ConfigError(
            "binarize_groups: sensitive values are not binary; a group "
            "partition must be configured");
      g = v;
    } else {
      if (static_cast<std::size_t>(v) >= partition.size())
        throw ConfigError("binarize_groups: sensitive value " + std::to_string(v) +
                          " missing from the group partition");
      g = partition[static_cast<std::size_t>(v)];
      if (g != 0 && g != 1)
        throw ConfigError("binarize_groups: partition entries must be 0 or 1");
    }
    out[i] = g;
  }
  return out;
}

real_t delta_sp(const std::vector<int>& predicted, const std::vector<int>& groups,
                int positive_class) {
  check_lengths(predicted.size(), groups.size(), "delta_sp");
  std::array<std::size_t, 2> total{0, 0}, positive{0, 0};
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const int g = groups[i];
    if (g != 0 && g != 1) throw DataError("delta_sp: groups must be binary");
    total[static_cast<std::size_t>(g)] += 1;
    if (predicted[i] == positive_class) positive[static_cast<std::size_t>(g)] += 1;
  }
  for (int g = 0; g < 2; ++g)
    if (total[static_cast<std::size_t>(g)] == 0)
      throw DataError("delta_sp: sensitive group " + std::to_string(g) +
                      " absent; statistical parity undefined");
  const real_t r0 = static_cast<real_t>(positive[0]) / static_cast<real_t>(total[0]);
  const real_t r1 = static_cast<real_t>(positive[1]) / static_cast<real_t>(total[1]);
  return std::abs(r0 - r1);
}

real_t delta_eo(const std::vector<int>& predicted, const std::vector<int>& actual,
                const std::vector<int>& groups, int positive_class) {
  check_lengths(predicted.size(), actual.size(), "delta_eo");
  check_lengths(predicted.size(), groups.size(), "delta_eo");
  std::array<std::size_t, 2> positives{0, 0}, true_positives{0, 0};
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const int g = groups[i];
    if (g != 0 && g != 1) throw DataError("delta_eo: groups must be binary");
    if (actual[i] != positive_class) continue;
    positives[static_cast<std::size_t>(g)] += 1;
    if (predicted[i] == positive_class)
      true_positives[static_cast<std::size_t>(g)] += 1;
  }
  for (int g = 0; g < 2; ++g)
    if (positives[static_cast<std::size_t>(g)] == 0)
      throw DataError("delta_eo: sensitive group " + std::to_string(g) +
                      " has no positive-labeled nodes; equal opportunity undefined");
  const real_t t0 =
      static_cast<real_t>(true_positives[0]) / static_cast<real_t>(positives[0]);
  const real_t t1 =
      static_cast<real_t>(true_positives[1]) / static_cast<real_t>(positives[1]);
  return std::abs(t0 - t1);
}

FairnessReport evaluate_predictions(const std::vector<int>& predicted,
                                    const std::vector<int>& actual,
                                    const std::vector<int>& sensitive,
                                    int positive_class,
                                    const std::vector<int>& partition) {
  check_lengths(predicted.size(), actual.size(), "evaluate_predictions");
  check_lengths(predicted.size(), sensitive.size(), "evaluate_predictions");
  FairnessReport rep;
  rep.positive_class = positive_class;
  rep.group_partition = partition;
  rep.sample_count = predicted.size();

  const std::vector<int> groups = binarize_groups(sensitive, partition);
  int max_class = positive_class;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    max_class = std::max({max_class, predicted[i], actual[i]});
  const auto c = static_cast<std::size_t>(max_class) + 1;
  rep.group_tables.assign(2, num::Tensor2(c, c));
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto g = static_cast<std::size_t>(groups[i]);
    rep.group_counts[g] += 1;
    rep.group_tables[g](static_cast<std::size_t>(actual[i]),
                        static_cast<std::size_t>(predicted[i])) += 1;
  }
  rep.accuracy = accuracy(predicted, actual);
  rep.delta_sp = delta_sp(predicted, groups, positive_class);
  rep.delta_eo = delta_eo(predicted, actual, groups, positive_class);
  return rep;
}

std::string FairnessReport::to_json() const {
  json j;
  j["accuracy"] = accuracy;
  j["delta_sp"] = delta_sp;
  j["delta_eo"] = delta_eo;
  j["positive_class"] = positive_class;
  j["group_partition"] = group_partition;
  j["group_counts"] = group_counts;
  j["sample_count"] = sample_count;
  std::vector<std::vector<std::vector<real_t>>> tables;
  for (const num::Tensor2& t : group_tables) {
    std::vector<std::vector<real_t>> rows(t.rows);
    for (std::size_t i = 0; i < t.rows; ++i)
      for (std::size_t k = 0; k < t.cols; ++k) rows[i].push_back(t(i, k));
    tables.push_back(std::move(rows));
  }
  j["group_tables"] = tables;
  return j.dump(2) + "\n";
}

DriftTable audit_condensation(const graph::Graph& g,
                              const condense::CondensedGraph& cg) {
  if (cg.num_syn == 0 || cg.labels.size() != cg.num_syn ||
      cg.sensitive.size() != cg.num_syn)
    throw DataError("audit_condensation: malformed condensed graph");
  const graph::DistributionStats src = graph::empirical_stats(g);
  const std::size_t c_count = src.class_props.size();
  const std::size_t s_count = src.group_props.size();
  if (cg.num_classes != c_count || cg.num_groups != s_count)
    throw DataError("audit_condensation: class/group cardinality mismatch");

  std::vector<real_t> syn_class(c_count, 0), syn_group(s_count, 0);
  num::Tensor2 syn_joint(c_count, s_count);
  const real_t inv = real_t(1) / static_cast<real_t>(cg.num_syn);
  for (std::size_t i = 0; i < cg.num_syn; ++i) {
    const auto c = static_cast<std::size_t>(cg.labels[i]);
    const auto a = static_cast<std::size_t>(cg.sensitive[i]);
    if (c >= c_count || a >= s_count)
      throw DataError("audit_condensation: condensed attribute out of range");
    syn_class[c] += inv;
    syn_group[a] += inv;
    syn_joint(c, a) += inv;
  }

  DriftTable table;
  table.bound = inv;
  // Guard the flag comparison against last-ulp roundoff in the proportions;
  // the allocation guarantee is exact in integer units.
  const real_t slack = 1e-12;
  for (std::size_t c = 0; c < c_count; ++c) {
    const real_t gap = std::abs(syn_class[c] - src.class_props[c]);
    table.class_gaps.push_back(gap);
    table.max_marginal_gap = std::max(table.max_marginal_gap, gap);
    if (gap > table.bound + slack) {
      std::ostringstream os;
      os << "label marginal " << c << " gap " << format_real(gap)
         << " exceeds bound " << format_real(table.bound);
      table.violations.push_back(os.str());
    }
  }
  for (std::size_t a = 0; a < s_count; ++a) {
    const real_t gap = std::abs(syn_group[a] - src.group_props[a]);
    table.group_gaps.push_back(gap);
    table.max_marginal_gap = std::max(table.max_marginal_gap, gap);
    if (gap > table.bound + slack) {
      std::ostringstream os;
      os << "sensitive marginal " << a << " gap " << format_real(gap)
         << " exceeds bound " << format_real(table.bound);
      table.violations.push_back(os.str());
    }
  }
  table.joint_gaps = num::Tensor2(c_count, s_count);
  for (std::size_t c = 0; c < c_count; ++c)
    for (std::size_t a = 0; a < s_count; ++a)
      table.joint_gaps(c, a) = std::abs(syn_joint(c, a) - src.joint_props(c, a));
  return table;
}

std::string DriftTable::render() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  os << "marginal           gap        bound      status\n";
  for (std::size_t c = 0; c < class_gaps.size(); ++c)
    os << "label " << std::left << std::setw(12) << c << std::right
       << std::setw(10) << class_gaps[c] << std::setw(13) << bound
       << (class_gaps[c] > bound + 1e-12 ? "   VIOLATION" : "   ok") << '\n';
  for (std::size_t a = 0; a < group_gaps.size(); ++a)
    os << "sensitive " << std::left << std::setw(8) << a << std::right
       << std::setw(10) << group_gaps[a] << std::setw(13) << bound
       << (group_gaps[a] > bound + 1e-12 ? "   VIOLATION" : "   ok") << '\n';
  os << "joint cell gaps (no hard bound):\n";
  for (std::size_t c = 0; c < joint_gaps.rows; ++c) {
    os << "  ";
    for (std::size_t a = 0; a < joint_gaps.cols; ++a)
      os << std::setw(10) << joint_gaps(c, a);
    os << '\n';
  }
  os << "max marginal gap " << max_marginal_gap << ", violations "
     << violations.size() << '\n';
  return os.str();
}

std::string DriftTable::to_json() const {
  json j;
  j["class_gaps"] = class_gaps;
  j["group_gaps"] = group_gaps;
  std::vector<std::vector<real_t>> joint(joint_gaps.rows);
  for (std::size_t c = 0; c < joint_gaps.rows; ++c)
    for (std::size_t a = 0; a < joint_gaps.cols; ++a)
      joint[c].push_back(joint_gaps(c, a));
  j["joint_gaps"] = joint;
  j["bound"] = bound;
  j["max_marginal_gap"] = max_marginal_gap;
  j["violations"] = violations;
  return j.dump(2) + "\n";
}

}  // namespace fairgc::metrics

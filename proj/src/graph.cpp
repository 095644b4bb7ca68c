#include "fairgc/graph.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "fairgc/io.hpp"

namespace fairgc::graph {

namespace {

int checked_category(long long v, const char* what, std::size_t row,
                     const std::string& origin) {
  if (v < 0)
    throw DataError(origin + ": row " + std::to_string(row) + ": negative " +
                    what + " value " + std::to_string(v));
  return static_cast<int>(v);
}

// Largest-remainder apportionment of `total` units across `props`, with the
// remainder units drawn by seeded weighted sampling over fractional parts.
// Guarantees |count_i - total*props_i| <= 1 for every i.
std::vector<std::size_t> apportion(const std::vector<real_t>& props,
                                   std::size_t total, std::mt19937_64& rng) {
  const std::size_t n = props.size();
  std::vector<std::size_t> counts(n, 0);
  std::vector<real_t> frac(n, 0);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const real_t target = props[i] * static_cast<real_t>(total);
    counts[i] = static_cast<std::size_t>(std::floor(target));
    frac[i] = target - static_cast<real_t>(counts[i]);
    assigned += counts[i];
  }
  std::size_t remaining = total - assigned;
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < n; ++i)
    if (frac[i] > 0) eligible.push_back(i);
  while (remaining > 0) {
    if (eligible.empty()) {
      // Fractions summed to an integer below `remaining` only through
      // roundoff; fall back to every index.
      for (std::size_t i = 0; i < n; ++i) eligible.push_back(i);
    }
    real_t total_w = 0;
    for (std::size_t i : eligible) total_w += std::max(frac[i], real_t(1e-12));
    std::uniform_real_distribution<real_t> dist(0, total_w);
    const real_t draw = dist(rng);
    real_t acc = 0;
    std::size_t chosen = eligible.back();
    std::size_t chosen_pos = eligible.size() - 1;
    for (std::size_t pos = 0; pos < eligible.size(); ++pos) {
      acc += std::max(frac[eligible[pos]], real_t(1e-12));
      if (draw <= acc) {
        chosen = eligible[pos];
        chosen_pos = pos;
        break;
      }
    }
    counts[chosen] += 1;  // at most one extra unit per index
    eligible.erase(eligible.begin() + static_cast<std::ptrdiff_t>(chosen_pos));
    --remaining;
  }
  return counts;
}

}  // namespace

Graph load_graph(const std::string& node_table_path,
                 const std::string& edge_list_path,
                 const NodeTableSchema& schema) {
  Graph g;
  const std::string node_text = io::read_text_file(node_table_path);
  io::CsvTable table = io::parse_csv(node_text, node_table_path);

  const int id_col = table.column(schema.id_column);
  if (id_col < 0)
    throw DataError(node_table_path + ": missing id column '" + schema.id_column + "'");
  const int label_col = table.column(schema.label_column);
  if (label_col < 0)
    throw DataError(node_table_path + ": missing label column '" +
                    schema.label_column + "'");
  const int sens_col = table.column(schema.sensitive_column);
  if (sens_col < 0)
    throw DataError(node_table_path + ": missing sensitive column '" +
                    schema.sensitive_column + "'");

  std::vector<int> feature_cols;
  if (schema.feature_columns.empty()) {
    for (std::size_t j = 0; j < table.header.size(); ++j) {
      const int ji = static_cast<int>(j);
      if (ji != id_col && ji != label_col && ji != sens_col)
        feature_cols.push_back(ji);
    }
  } else {
    for (const std::string& name : schema.feature_columns) {
      const int c = table.column(name);
      if (c < 0)
        throw DataError(node_table_path + ": missing feature column '" + name + "'");
      feature_cols.push_back(c);
    }
  }

  const std::size_t n = table.rows.size();
  const std::size_t d = feature_cols.size();
  g.num_nodes = n;
  g.features = num::Tensor2(n, d);
  g.labels.resize(n);
  g.sensitive.resize(n);
  g.original_ids.resize(n);

  std::unordered_map<std::int64_t, std::uint32_t> remap;
  remap.reserve(n);
  int max_label = -1, max_group = -1;
  for (std::size_t r = 0; r < n; ++r) {
    const auto& row = table.rows[r];
    const std::size_t csv_row = r + 2;  // header is row 1
    const std::int64_t src_id =
        io::parse_int(row[static_cast<std::size_t>(id_col)], node_table_path, csv_row);
    if (!remap.emplace(src_id, static_cast<std::uint32_t>(r)).second)
      throw DataError(node_table_path + ": duplicate node id " + std::to_string(src_id));
    g.original_ids[r] = src_id;
    g.labels[r] = checked_category(
        io::parse_int(row[static_cast<std::size_t>(label_col)], node_table_path, csv_row),
        "label", csv_row, node_table_path);
    g.sensitive[r] = checked_category(
        io::parse_int(row[static_cast<std::size_t>(sens_col)], node_table_path, csv_row),
        "sensitive", csv_row, node_table_path);
    max_label = std::max(max_label, g.labels[r]);
    max_group = std::max(max_group, g.sensitive[r]);
    for (std::size_t j = 0; j < d; ++j) {
      const double v = io::parse_real(row[static_cast<std::size_t>(feature_cols[j])],
                                      node_table_path, csv_row);
      if (!std::isfinite(v))
        throw DataError(node_table_path + ": row " + std::to_string(csv_row) +
                        ": non-finite feature value");
      g.features(r, j) = static_cast<real_t>(v);
    }
  }
  g.num_classes = static_cast<std::size_t>(max_label + 1);
  g.num_groups = static_cast<std::size_t>(max_group + 1);

  const std::string edge_text = io::read_text_file(edge_list_path);
  std::istringstream in(edge_text);
  std::string line;
  std::size_t lineno = 0;
  std::size_t self_loops = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::vector<std::string> tokens;
    std::string tok;
    while (ls >> tok) tokens.push_back(tok);
    if (tokens.empty()) continue;
    if (tokens.size() != 2)
      throw DataError(edge_list_path + ": line " + std::to_string(lineno) +
                      ": expected two node ids");
    const std::int64_t a = io::parse_int(tokens[0], edge_list_path, lineno);
    const std::int64_t b = io::parse_int(tokens[1], edge_list_path, lineno);
    const auto ita = remap.find(a);
    const auto itb = remap.find(b);
    if (ita == remap.end() || itb == remap.end())
      throw DataError(edge_list_path + ": line " + std::to_string(lineno) +
                      ": edge references unknown node id " +
                      std::to_string(ita == remap.end() ? a : b));
    std::uint32_t u = ita->second, v = itb->second;
    if (u == v) {
      ++self_loops;
      continue;
    }
    if (u > v) std::swap(u, v);
    edges.emplace_back(u, v);
  }
  std::sort(edges.begin(), edges.end());
  const std::size_t before = edges.size();
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  g.edges = std::move(edges);
  if (self_loops > 0)
    g.notes.push_back("dropped " + std::to_string(self_loops) + " self-loops");
  if (before != g.edges.size())
    g.notes.push_back("deduplicated " + std::to_string(before - g.edges.size()) +
                      " edges");
  return g;
}

Graph split_graph(const Graph& g, SplitFractions fractions, std::uint64_t seed) {
  const double sum = fractions.train + fractions.val + fractions.test;
  if (fractions.train < 0 || fractions.val < 0 || fractions.test < 0 ||
      fractions.train == 0 || sum > 1.0 + 1e-9)
    throw ConfigError("split fractions must be nonnegative with train > 0 and sum <= 1");

  Graph out = g;
  out.train_idx.clear();
  out.val_idx.clear();
  out.test_idx.clear();

  // Cells in (label, sensitive) lexicographic order; one RNG consumed in a
  // fixed sequence keeps the whole split deterministic.
  std::mt19937_64 rng(seed);
  const std::vector<real_t> fracs = {static_cast<real_t>(fractions.train),
                                     static_cast<real_t>(fractions.val),
                                     static_cast<real_t>(fractions.test)};
  std::size_t requested_splits = 0;
  for (real_t f : fracs)
    if (f > 0) ++requested_splits;

  for (std::size_t c = 0; c < g.num_classes; ++c) {
    for (std::size_t a = 0; a < g.num_groups; ++a) {
      std::vector<std::uint32_t> cell;
      for (std::size_t i = 0; i < g.num_nodes; ++i)
        if (g.labels[i] == static_cast<int>(c) &&
            g.sensitive[i] == static_cast<int>(a))
          cell.push_back(static_cast<std::uint32_t>(i));
      if (cell.empty()) continue;
      std::shuffle(cell.begin(), cell.end(), rng);
      if (cell.size() < requested_splits)
        out.notes.push_back("split cell (" + std::to_string(c) + "," +
                            std::to_string(a) + ") has " +
                            std::to_string(cell.size()) +
                            " nodes for " + std::to_string(requested_splits) +
                            " splits; proportional assignment");
      // Normalize so per-cell assignment covers the whole cell only when the
      // fractions sum to 1; otherwise the tail stays unassigned.
      std::vector<real_t> cell_props = fracs;
      auto counts = apportion(cell_props, cell.size(), rng);
      // apportion distributes exactly cell.size() units when sum==1; when
      // sum<1 it may hand the slack to some split, so recompute via floors.
      if (sum < 1.0 - 1e-9) {
        counts.assign(3, 0);
        std::size_t used = 0;
        for (std::size_t s = 0; s < 3; ++s) {
          counts[s] = static_cast<std::size_t>(
              std::floor(fracs[s] * static_cast<real_t>(cell.size())));
          used += counts[s];
        }
        (void)used;
      }
      std::size_t pos = 0;
      for (std::size_t s = 0; s < 3; ++s) {
        for (std::size_t k = 0; k < counts[s] && pos < cell.size(); ++k, ++pos) {
          if (s == 0)
            out.train_idx.push_back(cell[pos]);
          else if (s == 1)
            out.val_idx.push_back(cell[pos]);
          else
            out.test_idx.push_back(cell[pos]);
        }
      }
    }
  }
  std::sort(out.train_idx.begin(), out.train_idx.end());
  std::sort(out.val_idx.begin(), out.val_idx.end());
  std::sort(out.test_idx.begin(), out.test_idx.end());
  return out;
}

void apply_split_file(Graph& g, const std::string& path) {
  const std::string text = io::read_text_file(path);
  io::CsvTable table = io::parse_csv(text, path);
  const int id_col = table.column("id");
  const int split_col = table.column("split");
  if (id_col < 0 || split_col < 0)
    throw DataError(path + ": split file needs 'id' and 'split' columns");
  std::unordered_map<std::int64_t, std::uint32_t> remap;
  for (std::size_t i = 0; i < g.original_ids.size(); ++i)
    remap[g.original_ids[i]] = static_cast<std::uint32_t>(i);
  g.train_idx.clear();
  g.val_idx.clear();
  g.test_idx.clear();
  std::unordered_set<std::uint32_t> assigned;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::size_t csv_row = r + 2;
    const std::int64_t id =
        io::parse_int(table.rows[r][static_cast<std::size_t>(id_col)], path, csv_row);
    const auto it = remap.find(id);
    if (it == remap.end())
      throw DataError(path + ": row " + std::to_string(csv_row) +
                      ": unknown node id " + std::to_string(id));
    if (!assigned.insert(it->second).second)
      throw DataError(path + ": row " + std::to_string(csv_row) + ": node id " +
                      std::to_string(id) + " assigned to multiple splits");
    const std::string& name = table.rows[r][static_cast<std::size_t>(split_col)];
    if (name == "train")
      g.train_idx.push_back(it->second);
    else if (name == "val")
      g.val_idx.push_back(it->second);
    else if (name == "test")
      g.test_idx.push_back(it->second);
    else
      throw DataError(path + ": row " + std::to_string(csv_row) +
                      ": unknown split name '" + name + "'");
  }
  std::sort(g.train_idx.begin(), g.train_idx.end());
  std::sort(g.val_idx.begin(), g.val_idx.end());
  std::sort(g.test_idx.begin(), g.test_idx.end());
}

DistributionStats empirical_stats(const Graph& g) {
  if (g.train_idx.empty()) throw DataError("empirical_stats: empty training split");
  DistributionStats stats;
  const std::size_t C = g.num_classes, S = g.num_groups;
  stats.class_props.assign(C, 0);
  stats.group_props.assign(S, 0);
  stats.joint_props = num::Tensor2(C, S);
  stats.train_count = g.train_idx.size();
  const real_t inv = real_t(1) / static_cast<real_t>(stats.train_count);
  for (std::uint32_t i : g.train_idx) {
    const auto c = static_cast<std::size_t>(g.labels[i]);
    const auto a = static_cast<std::size_t>(g.sensitive[i]);
    stats.class_props[c] += inv;
    stats.group_props[a] += inv;
    stats.joint_props(c, a) += inv;
  }
  return stats;
}

}  // namespace fairgc::graph

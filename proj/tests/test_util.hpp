#pragma once

// Shared generators and independent oracles for the test binaries. Oracles
// here are deliberately written as plain counting/summation loops so they do
// not share code paths with the library implementations they check.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "fairgc/graph.hpp"
#include "fairgc/tensor.hpp"

namespace testutil {

using fairgc::real_t;
namespace num = fairgc::num;

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

// True when f() throws exactly E and the message contains `needle`.
template <typename E, typename F>
bool throws_with(F&& f, const std::string& needle) {
  try {
    f();
  } catch (const E& e) {
    return std::string(e.what()).find(needle) != std::string::npos;
  } catch (...) {
    return false;
  }
  return false;
}

// Fresh directory under the working directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    path_ = std::filesystem::absolute("tmp_" + tag + "_" +
                                      std::to_string(counter.fetch_add(1)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string str() const { return path_.string(); }
  std::string sub(const std::string& name) const {
    return (path_ / name).string();
  }

 private:
  std::filesystem::path path_;
};

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) {
    std::iota(parent.begin(), parent.end(), std::size_t(0));
  }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
  std::size_t components() {
    std::size_t c = 0;
    for (std::size_t i = 0; i < parent.size(); ++i)
      if (find(i) == i) ++c;
    return c;
  }
};

inline num::Tensor2 random_tensor(std::mt19937_64& rng, std::size_t r,
                                  std::size_t c, real_t lo = -1, real_t hi = 1) {
  num::Tensor2 t(r, c);
  std::uniform_real_distribution<real_t> dist(lo, hi);
  for (real_t& v : t.data) v = dist(rng);
  return t;
}

// Random consistent distribution statistics: a random positive joint table,
// normalized, with marginals derived from it.
inline fairgc::graph::DistributionStats random_stats(std::mt19937_64& rng,
                                                     std::size_t classes,
                                                     std::size_t groups) {
  fairgc::graph::DistributionStats s;
  s.joint_props = num::Tensor2(classes, groups);
  std::uniform_real_distribution<real_t> dist(0.05, 1.0);
  real_t total = 0;
  for (real_t& v : s.joint_props.data) {
    v = dist(rng);
    total += v;
  }
  for (real_t& v : s.joint_props.data) v /= total;
  s.class_props.assign(classes, 0);
  s.group_props.assign(groups, 0);
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t a = 0; a < groups; ++a) {
      s.class_props[c] += s.joint_props(c, a);
      s.group_props[a] += s.joint_props(c, a);
    }
  s.train_count = 1000;
  return s;
}

// In-memory attributed graph with class/group structure in the features,
// fully split into train/val/test. No file I/O involved.
inline fairgc::graph::Graph random_graph(std::mt19937_64& rng, std::size_t n,
                                         std::size_t classes = 2,
                                         std::size_t groups = 2,
                                         std::size_t dim = 6) {
  fairgc::graph::Graph g;
  g.num_nodes = n;
  g.num_classes = classes;
  g.num_groups = groups;
  g.features = num::Tensor2(n, dim);
  std::uniform_int_distribution<int> cls(0, static_cast<int>(classes) - 1);
  std::uniform_int_distribution<int> grp(0, static_cast<int>(groups) - 1);
  std::normal_distribution<real_t> gauss(0, 1);
  for (std::size_t i = 0; i < n; ++i) {
    g.labels.push_back(cls(rng));
    g.sensitive.push_back(grp(rng));
    for (std::size_t j = 0; j < dim; ++j)
      g.features(i, j) = gauss(rng) + (j < dim / 2 ? real_t(0.8) * g.labels[i]
                                                   : real_t(0.4) * g.sensitive[i]);
    g.original_ids.push_back(static_cast<std::int64_t>(i));
  }
  std::uniform_real_distribution<real_t> unit(0, 1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (unit(rng) < 8.0 / static_cast<real_t>(n))
        g.edges.emplace_back(static_cast<std::uint32_t>(i),
                             static_cast<std::uint32_t>(j));
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n / 2)
      g.train_idx.push_back(order[i]);
    else if (i < 3 * n / 4)
      g.val_idx.push_back(order[i]);
    else
      g.test_idx.push_back(order[i]);
  }
  std::sort(g.train_idx.begin(), g.train_idx.end());
  std::sort(g.val_idx.begin(), g.val_idx.end());
  std::sort(g.test_idx.begin(), g.test_idx.end());
  return g;
}

// Brute-force fairness oracles: direct tallies, nothing shared with
// fairgc::metrics.
inline real_t oracle_accuracy(const std::vector<int>& pred,
                              const std::vector<int>& actual) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == actual[i]) ++hit;
  return static_cast<real_t>(hit) / static_cast<real_t>(pred.size());
}

inline real_t oracle_delta_sp(const std::vector<int>& pred,
                              const std::vector<int>& group, int positive) {
  std::size_t n0 = 0, n1 = 0, p0 = 0, p1 = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (group[i] == 0) {
      ++n0;
      if (pred[i] == positive) ++p0;
    } else {
      ++n1;
      if (pred[i] == positive) ++p1;
    }
  }
  const real_t r0 = static_cast<real_t>(p0) / static_cast<real_t>(n0);
  const real_t r1 = static_cast<real_t>(p1) / static_cast<real_t>(n1);
  return std::abs(r0 - r1);
}

inline real_t oracle_delta_eo(const std::vector<int>& pred,
                              const std::vector<int>& actual,
                              const std::vector<int>& group, int positive) {
  std::size_t n0 = 0, n1 = 0, t0 = 0, t1 = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (actual[i] != positive) continue;
    if (group[i] == 0) {
      ++n0;
      if (pred[i] == positive) ++t0;
    } else {
      ++n1;
      if (pred[i] == positive) ++t1;
    }
  }
  const real_t r0 = static_cast<real_t>(t0) / static_cast<real_t>(n0);
  const real_t r1 = static_cast<real_t>(t1) / static_cast<real_t>(n1);
  return std::abs(r0 - r1);
}

inline real_t max_abs_diff(const num::Tensor2& a, const num::Tensor2& b) {
  real_t m = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace testutil

#include "fairgc/condenser.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "fairgc/artifacts.hpp"
#include "fairgc/io.hpp"
#include "json.hpp"

namespace fairgc::condense {

namespace {

using nlohmann::json;

// Largest-remainder apportionment; remainder units resolved by a seeded draw
// weighted by fractional parts, each index bumped at most once, so
// |counts[i] - total*props[i]| < 1 for every i.
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
  std::size_t remaining = total > assigned ? total - assigned : 0;
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < n; ++i)
    if (frac[i] > 0) eligible.push_back(i);
  while (remaining > 0) {
    if (eligible.empty())
      for (std::size_t i = 0; i < n; ++i) eligible.push_back(i);
    real_t total_w = 0;
    for (std::size_t i : eligible) total_w += std::max(frac[i], real_t(1e-12));
    std::uniform_real_distribution<real_t> dist(0, total_w);
    const real_t draw = dist(rng);
    real_t acc = 0;
    std::size_t pos = eligible.size() - 1;
    for (std::size_t p = 0; p < eligible.size(); ++p) {
      acc += std::max(frac[eligible[p]], real_t(1e-12));
      if (draw <= acc) {
        pos = p;
        break;
      }
    }
    counts[eligible[pos]] += 1;
    eligible.erase(eligible.begin() + static_cast<std::ptrdiff_t>(pos));
    --remaining;
  }
  return counts;
}

real_t cosine(const num::Tensor2& x, const std::vector<real_t>& norms,
              std::size_t i, std::size_t j) {
  real_t dot = 0;
  for (std::size_t t = 0; t < x.cols; ++t) dot += x(i, t) * x(j, t);
  return dot / (norms[i] * norms[j]);
}

struct ProxyCache {
  num::Tensor2 pre1, h, logits, probs;
};

real_t proxy_forward(const ProxyNet& net, const num::Tensor2& x,
                     const std::vector<int>& labels, ProxyCache* cache) {
  if (x.cols != net.input_dim)
    throw NumericError("dimension mismatch in proxy forward");
  if (x.rows != labels.size() || x.rows == 0)
    throw DataError("proxy forward: feature/label row count mismatch");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= net.num_classes)
      throw DataError("proxy forward: label outside class range");
  num::Tensor2 pre1 = num::add_row(num::matmul(x, net.w1.value), net.b1.value);
  num::Tensor2 h = num::relu(pre1);
  num::Tensor2 logits = num::add_row(num::matmul(h, net.w2.value), net.b2.value);
  const std::size_t n = x.rows, c = net.num_classes;
  num::Tensor2 probs(n, c);
  real_t loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    real_t mx = logits(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits(i, j));
    real_t sum = 0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(logits(i, j) - mx);
    const real_t lse = mx + std::log(sum);
    for (std::size_t j = 0; j < c; ++j) probs(i, j) = std::exp(logits(i, j) - lse);
    loss += lse - logits(i, static_cast<std::size_t>(labels[i]));
  }
  loss /= static_cast<real_t>(n);
  if (cache) {
    cache->pre1 = std::move(pre1);
    cache->h = std::move(h);
    cache->logits = std::move(logits);
    cache->probs = std::move(probs);
  }
  return loss;
}

}  // namespace

std::size_t compute_budget(std::size_t n, double rho) {
  if (n < 1) throw ConfigError("compute_budget: n must be >= 1");
  if (!(rho > 0.0 && rho < 1.0))
    throw ConfigError("compute_budget: rho must lie in (0,1)");
  const auto floored =
      static_cast<std::size_t>(std::floor(rho * static_cast<double>(n)));
  return std::max<std::size_t>(10, floored);
}

Allocation allocate_attributes(const graph::DistributionStats& stats,
                               std::size_t n_syn, std::uint64_t seed,
                               bool joint_mode) {
  if (n_syn < 1) throw ConfigError("allocate_attributes: n_syn must be >= 1");
  const std::size_t C = stats.class_props.size();
  const std::size_t S = stats.group_props.size();
  if (C == 0 || S == 0 || stats.joint_props.rows != C || stats.joint_props.cols != S)
    throw DataError("allocate_attributes: malformed distribution stats");

  std::mt19937_64 rng(seed);
  Allocation out;
  const std::vector<std::size_t> n_c = apportion(stats.class_props, n_syn, rng);
  const std::vector<std::size_t> g_a = apportion(stats.group_props, n_syn, rng);
  for (std::size_t c = 0; c < C; ++c)
    if (stats.class_props[c] <= 0)
      out.notes.push_back("class " + std::to_string(c) +
                          " has zero source proportion; allocated 0 nodes");

  out.joint_counts = num::Tensor2(C, S);
  if (joint_mode) {
    // Floors first, then a transportation-style pass that spends the leftover
    // units only on cells whose row and column are both still short, so the
    // final table meets n_c and g_a exactly.
    num::Tensor2 frac(C, S);
    std::vector<long long> row_deficit(C, 0), col_deficit(S, 0);
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t a = 0; a < S; ++a) {
        const real_t target =
            stats.joint_props(c, a) * static_cast<real_t>(n_syn);
        const auto m = static_cast<std::size_t>(std::floor(target));
        out.joint_counts(c, a) = static_cast<real_t>(m);
        frac(c, a) = target - static_cast<real_t>(m);
        assigned += m;
      }
    for (std::size_t c = 0; c < C; ++c) {
      long long rs = 0;
      for (std::size_t a = 0; a < S; ++a)
        rs += static_cast<long long>(out.joint_counts(c, a));
      row_deficit[c] = static_cast<long long>(n_c[c]) - rs;
    }
    for (std::size_t a = 0; a < S; ++a) {
      long long cs = 0;
      for (std::size_t c = 0; c < C; ++c)
        cs += static_cast<long long>(out.joint_counts(c, a));
      col_deficit[a] = static_cast<long long>(g_a[a]) - cs;
    }
    // Roundoff can leave a floor row above its marginal; give those units back
    // from the most overshooting cells before distributing.
    for (std::size_t c = 0; c < C; ++c)
      while (row_deficit[c] < 0) {
        std::size_t pick = 0;
        real_t best = -1;
        for (std::size_t a = 0; a < S; ++a)
          if (out.joint_counts(c, a) > 0 && frac(c, a) > best) {
            best = frac(c, a);
            pick = a;
          }
        out.joint_counts(c, pick) -= 1;
        row_deficit[c] += 1;
        col_deficit[pick] += 1;
      }
    for (std::size_t a = 0; a < S; ++a)
      while (col_deficit[a] < 0) {
        std::size_t pick = 0;
        real_t best = -1;
        for (std::size_t c = 0; c < C; ++c)
          if (out.joint_counts(c, a) > 0 && frac(c, a) > best) {
            best = frac(c, a);
            pick = c;
          }
        out.joint_counts(pick, a) -= 1;
        col_deficit[a] += 1;
        row_deficit[pick] += 1;
      }
    long long remaining = 0;
    for (std::size_t c = 0; c < C; ++c) remaining += row_deficit[c];
    num::Tensor2 bumps(C, S);
    while (remaining > 0) {
      bool found = false;
      std::size_t bc = 0, ba = 0;
      real_t best_bump = std::numeric_limits<real_t>::max(), best_frac = -1;
      for (std::size_t c = 0; c < C; ++c) {
        if (row_deficit[c] <= 0) continue;
        for (std::size_t a = 0; a < S; ++a) {
          if (col_deficit[a] <= 0) continue;
          const real_t b = bumps(c, a);
          if (!found || b < best_bump ||
              (b == best_bump && frac(c, a) > best_frac)) {
            found = true;
            best_bump = b;
            best_frac = frac(c, a);
            bc = c;
            ba = a;
          }
        }
      }
      if (!found) {
        out.notes.push_back("joint allocation could not meet both marginals");
        break;
      }
      out.joint_counts(bc, ba) += 1;
      bumps(bc, ba) += 1;
      row_deficit[bc] -= 1;
      col_deficit[ba] -= 1;
      --remaining;
    }
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t a = 0; a < S; ++a) {
        const auto m = static_cast<std::size_t>(out.joint_counts(c, a));
        for (std::size_t t = 0; t < m; ++t) {
          out.labels.push_back(static_cast<int>(c));
          out.sensitive.push_back(static_cast<int>(a));
        }
      }
  } else {
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < n_c[c]; ++t)
        out.labels.push_back(static_cast<int>(c));
    for (std::size_t a = 0; a < S; ++a)
      for (std::size_t t = 0; t < g_a[a]; ++t)
        out.sensitive.push_back(static_cast<int>(a));
    std::shuffle(out.sensitive.begin(), out.sensitive.end(), rng);
    for (std::size_t i = 0; i < out.labels.size(); ++i)
      out.joint_counts(static_cast<std::size_t>(out.labels[i]),
                       static_cast<std::size_t>(out.sensitive[i])) += 1;
    out.notes.push_back("marginals-only allocation: joint cells paired at random");
  }
  return out;
}

InitResult init_features(const graph::Graph& g, const std::vector<int>& syn_labels,
                         const std::vector<int>& syn_sensitive, std::uint64_t seed) {
  const std::size_t n_syn = syn_labels.size();
  if (n_syn == 0 || syn_sensitive.size() != n_syn)
    throw DataError("init_features: label/sensitive vectors empty or mismatched");
  if (g.train_idx.empty())
    throw DataError("init_features: empty training split");
  const std::size_t C = g.num_classes, S = g.num_groups, d = g.features.cols;
  for (std::size_t i = 0; i < n_syn; ++i)
    if (syn_labels[i] < 0 || static_cast<std::size_t>(syn_labels[i]) >= C ||
        syn_sensitive[i] < 0 || static_cast<std::size_t>(syn_sensitive[i]) >= S)
      throw DataError("init_features: synthetic attribute outside source range");

  std::vector<std::vector<std::uint32_t>> cell(C * S), class_cell(C);
  for (std::uint32_t idx : g.train_idx) {
    const auto c = static_cast<std::size_t>(g.labels[idx]);
    const auto a = static_cast<std::size_t>(g.sensitive[idx]);
    cell[c * S + a].push_back(idx);
    class_cell[c].push_back(idx);
  }
  std::mt19937_64 rng(seed);
  for (auto& v : cell) std::shuffle(v.begin(), v.end(), rng);
  for (auto& v : class_cell) std::shuffle(v.begin(), v.end(), rng);

  InitResult res;
  res.source_rows.reserve(n_syn);
  std::vector<std::size_t> cell_pos(C * S, 0), class_pos(C, 0);
  std::vector<bool> fallback_noted(C * S, false);
  for (std::size_t i = 0; i < n_syn; ++i) {
    const auto c = static_cast<std::size_t>(syn_labels[i]);
    const auto a = static_cast<std::size_t>(syn_sensitive[i]);
    std::vector<std::uint32_t>* pool = &cell[c * S + a];
    std::size_t* pos = &cell_pos[c * S + a];
    if (pool->empty()) {
      if (!fallback_noted[c * S + a]) {
        res.notes.push_back("cell (" + std::to_string(c) + "," + std::to_string(a) +
                            ") empty in training split; sampling from class " +
                            std::to_string(c));
        fallback_noted[c * S + a] = true;
      }
      pool = &class_cell[c];
      pos = &class_pos[c];
      if (pool->empty())
        throw DataError("init_features: no training nodes with label " +
                        std::to_string(c));
    }
    std::uint32_t src;
    if (*pos < pool->size()) {
      src = (*pool)[(*pos)++];
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, pool->size() - 1);
      src = (*pool)[pick(rng)];
    }
    res.source_rows.push_back(src);
  }

  res.mean.assign(d, 0);
  res.stddev.assign(d, 0);
  const real_t inv = real_t(1) / static_cast<real_t>(n_syn);
  for (std::uint32_t src : res.source_rows)
    for (std::size_t j = 0; j < d; ++j) res.mean[j] += g.features(src, j) * inv;
  for (std::uint32_t src : res.source_rows)
    for (std::size_t j = 0; j < d; ++j) {
      const real_t dv = g.features(src, j) - res.mean[j];
      res.stddev[j] += dv * dv * inv;
    }
  for (std::size_t j = 0; j < d; ++j) res.stddev[j] = std::sqrt(res.stddev[j]);
  res.features = num::Tensor2(n_syn, d);
  for (std::size_t i = 0; i < n_syn; ++i)
    for (std::size_t j = 0; j < d; ++j)
      res.features(i, j) = (g.features(res.source_rows[i], j) - res.mean[j]) /
                           (res.stddev[j] + real_t(1e-8));
  return res;
}

ProxyNet::ProxyNet(std::size_t input_dim_, std::size_t hidden_,
                   std::size_t num_classes_, std::uint64_t seed)
    : input_dim(input_dim_), hidden(hidden_), num_classes(num_classes_) {
  if (input_dim == 0 || hidden == 0) throw ConfigError("proxy: zero width");
  if (num_classes == 0) throw ConfigError("proxy: zero classes");
  std::mt19937_64 rng(seed);
  auto fill = [&rng](num::Tensor2& t, std::size_t fan_in) {
    const real_t bound = real_t(1) / std::sqrt(static_cast<real_t>(fan_in));
    std::uniform_real_distribution<real_t> dist(-bound, bound);
    for (real_t& v : t.data) v = dist(rng);
  };
  num::Tensor2 w1v(input_dim, hidden), w2v(hidden, num_classes);
  fill(w1v, input_dim);
  fill(w2v, hidden);
  w1 = num::ParamBlock("proxy.w1", std::move(w1v));
  b1 = num::ParamBlock("proxy.b1", num::Tensor2(1, hidden));
  w2 = num::ParamBlock("proxy.w2", std::move(w2v));
  b2 = num::ParamBlock("proxy.b2", num::Tensor2(1, num_classes));
}

std::vector<num::ParamBlock*> ProxyNet::params() { return {&w1, &b1, &w2, &b2}; }

real_t proxy_loss(const ProxyNet& net, const num::Tensor2& x,
                  const std::vector<int>& labels) {
  return proxy_forward(net, x, labels, nullptr);
}

real_t proxy_loss_grad(ProxyNet& net, const num::Tensor2& x,
                       const std::vector<int>& labels, num::Tensor2* dx) {
  ProxyCache cache;
  const real_t loss = proxy_forward(net, x, labels, &cache);
  const std::size_t n = x.rows, c = net.num_classes;
  num::Tensor2 dlogits(n, c);
  const real_t inv = real_t(1) / static_cast<real_t>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j)
      dlogits(i, j) =
          (cache.probs(i, j) -
           (j == static_cast<std::size_t>(labels[i]) ? real_t(1) : real_t(0))) *
          inv;
  net.w2.grad = num::add(net.w2.grad, num::matmul(num::transpose(cache.h), dlogits));
  net.b2.grad = num::add(net.b2.grad, num::colsum(dlogits));
  num::Tensor2 dh = num::matmul(dlogits, num::transpose(net.w2.value));
  num::Tensor2 dpre = num::relu_backward(dh, cache.pre1);
  net.w1.grad = num::add(net.w1.grad, num::matmul(num::transpose(x), dpre));
  net.b1.grad = num::add(net.b1.grad, num::colsum(dpre));
  if (dx) *dx = num::matmul(dpre, num::transpose(net.w1.value));
  return loss;
}

DistillResult distill_features(const num::Tensor2& x0, const std::vector<int>& labels,
                               ProxyNet& proxy, std::size_t steps, double lr,
                               double clip) {
  if (steps < 1) throw ConfigError("distill_features: steps must be >= 1");
  num::check_finite(x0, "distill_features input");
  num::OptimizerConfig ocfg;
  ocfg.lr = static_cast<real_t>(lr);
  ocfg.clip_norm = static_cast<real_t>(clip);
  num::AdamOptimizer opt(num::AdamOptimizer::Mode::Adam, ocfg);

  num::ParamBlock feats("features", x0);
  std::vector<num::ParamBlock*> params = {&feats};
  for (num::ParamBlock* p : proxy.params()) params.push_back(p);

  DistillResult res;
  res.features = x0;
  real_t best = std::numeric_limits<real_t>::max();
  for (std::size_t t = 0; t < steps; ++t) {
    for (num::ParamBlock* p : params) p->zero_grad();
    num::Tensor2 dx;
    const real_t loss = proxy_loss_grad(proxy, feats.value, labels, &dx);
    if (!std::isfinite(loss))
      throw NumericError("distillation loss non-finite at step " + std::to_string(t));
    feats.grad = std::move(dx);
    res.loss_trace.push_back(loss);
    if (loss < best) {
      best = loss;
      res.best_step = t;
      res.features = feats.value;
    }
    opt.step(params);
  }
  // Trailing-20-step averages are expected to never increase; a violation is
  // recorded, not fatal, since the returned snapshot is the best step anyway.
  const std::size_t w = 20;
  if (res.loss_trace.size() > w) {
    real_t prev = 0;
    for (std::size_t t = 0; t < w; ++t) prev += res.loss_trace[t];
    for (std::size_t t = w; t < res.loss_trace.size(); ++t) {
      const real_t cur = prev - res.loss_trace[t - w] + res.loss_trace[t];
      if (cur > prev + real_t(1e-9) * std::max<real_t>(1, std::abs(prev))) {
        res.notes.push_back("loss trailing average increased at step " +
                            std::to_string(t));
        break;
      }
      prev = cur;
    }
  }
  return res;
}

Adjacency build_adjacency(const num::Tensor2& x, const AdjacencyOptions& opts) {
  const std::size_t n = x.rows;
  if (n == 0) throw DataError("build_adjacency: empty feature matrix");
  num::check_finite(x, "build_adjacency input");

  std::vector<real_t> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    real_t s = 0;
    for (std::size_t j = 0; j < x.cols; ++j) s += x(i, j) * x(i, j);
    norms[i] = std::max(std::sqrt(s), real_t(1e-12));
  }

  Adjacency out;
  out.sparse_track = n > opts.sparse_threshold;
  std::size_t k =
      out.sparse_track
          ? opts.k_sparse
          : (opts.k_dense > 0
                 ? opts.k_dense
                 : std::max<std::size_t>(
                       10, static_cast<std::size_t>(
                               std::ceil(std::max(opts.source_mean_degree, 0.0)))));
  if (k >= n) {
    out.notes.push_back("k=" + std::to_string(k) + " clamped to " +
                        std::to_string(n - 1) + " (n_syn=" + std::to_string(n) + ")");
    k = n - 1;
  }
  out.k_used = k;

  // Per-row top-k by (similarity desc, index asc); ties are deterministic.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  std::vector<std::pair<real_t, std::size_t>> cand;
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      cand.emplace_back(cosine(x, norms, i, j), j);
    }
    const std::size_t kk = std::min(k, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(kk),
                      cand.end(), [](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first > b.first;
                        return a.second < b.second;
                      });
    for (std::size_t t = 0; t < kk; ++t) {
      const std::size_t j = cand[t].second;
      pairs.emplace_back(static_cast<std::uint32_t>(std::min(i, j)),
                         static_cast<std::uint32_t>(std::max(i, j)));
    }
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

  out.matrix = num::Tensor2(n, n);
  out.edges.reserve(pairs.size());
  for (const auto& [a, b] : pairs) {
    const real_t w = std::min(std::max(cosine(x, norms, a, b), real_t(0)), real_t(1));
    out.edges.emplace_back(a, b, w);
    out.matrix(a, b) = w;
    out.matrix(b, a) = w;
  }
  return out;
}

std::uint64_t CondensedGraph::content_hash() const {
  std::ostringstream os;
  os << "condensed|" << num_syn << '|' << num_classes << '|' << num_groups << '\n';
  for (int v : labels) os << v << ',';
  os << '\n';
  for (int v : sensitive) os << v << ',';
  os << '\n';
  for (real_t v : features.data) os << format_real(v) << ',';
  os << '\n';
  for (const auto& [a, b, w] : edges)
    os << a << ' ' << b << ' ' << format_real(w) << '\n';
  for (real_t v : feature_mean) os << format_real(v) << ',';
  os << '\n';
  for (real_t v : feature_std) os << format_real(v) << ',';
  os << '\n';
  return fnv1a64(os.str());
}

namespace {

std::string nodes_csv_text(const CondensedGraph& cg) {
  std::ostringstream os;
  os << "id,label,sensitive\n";
  for (std::size_t i = 0; i < cg.num_syn; ++i)
    os << i << ',' << cg.labels[i] << ',' << cg.sensitive[i] << '\n';
  return os.str();
}

std::string edges_text(const CondensedGraph& cg) {
  std::ostringstream os;
  os << "# a b weight\n";
  for (const auto& [a, b, w] : cg.edges)
    os << a << ' ' << b << ' ' << format_real(w) << '\n';
  return os.str();
}

json stats_to_json(const graph::DistributionStats& s) {
  json j;
  j["class_props"] = s.class_props;
  j["group_props"] = s.group_props;
  std::vector<std::vector<real_t>> joint(s.joint_props.rows);
  for (std::size_t c = 0; c < s.joint_props.rows; ++c)
    for (std::size_t a = 0; a < s.joint_props.cols; ++a)
      joint[c].push_back(s.joint_props(c, a));
  j["joint_props"] = joint;
  j["train_count"] = s.train_count;
  return j;
}

graph::DistributionStats stats_from_json(const json& j) {
  graph::DistributionStats s;
  s.class_props = j.at("class_props").get<std::vector<real_t>>();
  s.group_props = j.at("group_props").get<std::vector<real_t>>();
  const auto joint = j.at("joint_props").get<std::vector<std::vector<real_t>>>();
  s.joint_props = num::Tensor2(s.class_props.size(), s.group_props.size());
  for (std::size_t c = 0; c < s.joint_props.rows; ++c)
    for (std::size_t a = 0; a < s.joint_props.cols; ++a)
      s.joint_props(c, a) = joint.at(c).at(a);
  s.train_count = j.at("train_count").get<std::size_t>();
  return s;
}

}  // namespace

void save_condensed(const CondensedGraph& cg, const std::string& dir) {
  const std::string features_text = io::tensor_csv_text(cg.features, "f");
  const std::string nodes_text = nodes_csv_text(cg);
  const std::string edge_list = edges_text(cg);

  json manifest;
  manifest["type"] = "condensed_graph";
  manifest["format_version"] = 1;
  manifest["n_syn"] = cg.num_syn;
  manifest["num_classes"] = cg.num_classes;
  manifest["num_groups"] = cg.num_groups;
  manifest["seed"] = cg.seed;
  manifest["rho"] = cg.rho;
  manifest["content_hash"] = hash_hex(cg.content_hash());
  manifest["files"] = {{"features.csv", hash_hex(fnv1a64(features_text))},
                       {"nodes.csv", hash_hex(fnv1a64(nodes_text))},
                       {"edges.txt", hash_hex(fnv1a64(edge_list))}};
  manifest["source_stats"] = stats_to_json(cg.source_stats);
  manifest["zscore_mean"] = cg.feature_mean;
  manifest["zscore_std"] = cg.feature_std;
  manifest["knn_k"] = cg.knn_k;
  manifest["sparse_track"] = cg.sparse_track;
  manifest["distill_best_step"] = cg.distill_best_step;
  manifest["loss_trace"] = cg.loss_trace;
  manifest["notes"] = cg.notes;

  io::write_text_file_atomic(dir + "/features.csv", features_text);
  io::write_text_file_atomic(dir + "/nodes.csv", nodes_text);
  io::write_text_file_atomic(dir + "/edges.txt", edge_list);
  io::write_text_file_atomic(dir + "/manifest.json", manifest.dump(2) + "\n");
}

CondensedGraph load_condensed(const std::string& dir) {
  json manifest;
  try {
    manifest = json::parse(io::read_text_file(dir + "/manifest.json"));
  } catch (const json::exception& e) {
    throw DataError(dir + "/manifest.json: " + e.what());
  }
  CondensedGraph cg;
  try {
    for (const auto& [name, hash] : manifest.at("files").items()) {
      const std::string text = io::read_text_file(dir + "/" + name);
      if (hash_hex(fnv1a64(text)) != hash.get<std::string>())
        throw DataError(dir + "/" + name + ": content does not match manifest hash");
    }
    cg.num_syn = manifest.at("n_syn").get<std::size_t>();
    cg.num_classes = manifest.at("num_classes").get<std::size_t>();
    cg.num_groups = manifest.at("num_groups").get<std::size_t>();
    cg.seed = manifest.at("seed").get<std::uint64_t>();
    cg.rho = manifest.at("rho").get<double>();
    cg.source_stats = stats_from_json(manifest.at("source_stats"));
    cg.feature_mean = manifest.at("zscore_mean").get<std::vector<real_t>>();
    cg.feature_std = manifest.at("zscore_std").get<std::vector<real_t>>();
    cg.knn_k = manifest.at("knn_k").get<std::size_t>();
    cg.sparse_track = manifest.at("sparse_track").get<bool>();
    cg.distill_best_step = manifest.at("distill_best_step").get<std::size_t>();
    cg.loss_trace = manifest.at("loss_trace").get<std::vector<real_t>>();
    cg.notes = manifest.at("notes").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw DataError(dir + "/manifest.json: " + e.what());
  }

  cg.features = io::read_tensor_csv(dir + "/features.csv");
  const std::string nodes_path = dir + "/nodes.csv";
  const io::CsvTable nodes = io::parse_csv(io::read_text_file(nodes_path), nodes_path);
  if (nodes.rows.size() != cg.num_syn || cg.features.rows != cg.num_syn)
    throw DataError(dir + ": node/feature row count does not match manifest");
  const int label_col = nodes.column("label"), sens_col = nodes.column("sensitive");
  if (label_col < 0 || sens_col < 0)
    throw DataError(nodes_path + ": missing label/sensitive column");
  for (std::size_t i = 0; i < cg.num_syn; ++i) {
    cg.labels.push_back(static_cast<int>(io::parse_int(
        nodes.rows[i][static_cast<std::size_t>(label_col)], nodes_path, i + 2)));
    cg.sensitive.push_back(static_cast<int>(io::parse_int(
        nodes.rows[i][static_cast<std::size_t>(sens_col)], nodes_path, i + 2)));
  }

  const std::string edges_path = dir + "/edges.txt";
  std::istringstream in(io::read_text_file(edges_path));
  std::string line;
  std::size_t lineno = 0;
  cg.adjacency = num::Tensor2(cg.num_syn, cg.num_syn);
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::vector<std::string> tokens;
    std::string tok;
    while (ls >> tok) tokens.push_back(tok);
    if (tokens.empty()) continue;
    if (tokens.size() != 3)
      throw DataError(edges_path + ": line " + std::to_string(lineno) +
                      ": expected 'a b weight'");
    const auto a = static_cast<std::uint32_t>(io::parse_int(tokens[0], edges_path, lineno));
    const auto b = static_cast<std::uint32_t>(io::parse_int(tokens[1], edges_path, lineno));
    const auto w = static_cast<real_t>(io::parse_real(tokens[2], edges_path, lineno));
    if (a >= cg.num_syn || b >= cg.num_syn || a >= b)
      throw DataError(edges_path + ": line " + std::to_string(lineno) +
                      ": invalid edge endpoints");
    cg.edges.emplace_back(a, b, w);
    cg.adjacency(a, b) = w;
    cg.adjacency(b, a) = w;
  }

  const std::string recorded = manifest.at("content_hash").get<std::string>();
  if (hash_hex(cg.content_hash()) != recorded)
    throw DataError(dir + ": condensed content hash mismatch (stale or edited artifacts)");
  return cg;
}

}  // namespace fairgc::condense

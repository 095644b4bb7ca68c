#include "fairgc/fairnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <random>
#include <sstream>

#include "fairgc/artifacts.hpp"
#include "fairgc/io.hpp"
#include "fairgc/metrics.hpp"
#include "json.hpp"

namespace fairgc::fairnet {

namespace {

using nlohmann::json;

constexpr real_t kNormEps = 1e-12;
constexpr real_t kBnMomentum = 0.1;

struct LayerCache {
  num::Tensor2 pre_act;       // h_prev W1 (+ z W2)
  num::Tensor2 relu_out;
  num::Tensor2 dropout_mask;  // empty when dropout inactive
  num::Tensor2 dropped;
  num::LayerNormCache ln;
  num::Tensor2 out;
};

struct ForwardCache {
  num::Tensor2 pre_bn;
  num::BatchNormCache bn;
  num::Tensor2 bn_out;
  num::Tensor2 h0;
  std::vector<LayerCache> layers;
  num::Tensor2 head_pre;
  num::Tensor2 head_h;
  num::Tensor2 logits;
  num::Tensor2 probs;
};

num::Tensor2 dropout_mask(std::size_t rows, std::size_t cols, double rate,
                          std::mt19937_64& rng) {
  num::Tensor2 mask(rows, cols);
  const real_t keep = real_t(1) - static_cast<real_t>(rate);
  const real_t inv_keep = real_t(1) / keep;
  std::uniform_real_distribution<real_t> dist(0, 1);
  for (real_t& v : mask.data) v = dist(rng) < keep ? inv_keep : real_t(0);
  return mask;
}

// Full network forward. zspec null means no spectral contribution. In train
// mode BN uses batch statistics; updated running stats are written to the
// out-parameters when provided.
void net_forward(const FairNetParams& p, const num::Tensor2& x,
                 const num::Tensor2* zspec, bool train_mode,
                 std::uint64_t mask_seed, ForwardCache& c,
                 num::Tensor2* new_running_mean, num::Tensor2* new_running_var) {
  if (x.cols != p.input_dim)
    throw NumericError("feature width does not match the network encoder");
  c.pre_bn = num::matmul(x, p.w0.value);
  if (train_mode) {
    c.bn_out = num::batch_norm_train(c.pre_bn, p.bn_gamma.value, p.bn_beta.value,
                                     kNormEps, &c.bn);
    if (new_running_mean) {
      *new_running_mean = p.bn_running_mean;
      *new_running_var = p.bn_running_var;
      for (std::size_t j = 0; j < p.bn_running_mean.cols; ++j) {
        (*new_running_mean)(0, j) = (real_t(1) - kBnMomentum) * (*new_running_mean)(0, j) +
                                    kBnMomentum * c.bn.mean[j];
        (*new_running_var)(0, j) = (real_t(1) - kBnMomentum) * (*new_running_var)(0, j) +
                                   kBnMomentum * c.bn.var[j];
      }
    }
  } else {
    std::vector<real_t> rm(p.bn_running_mean.data.begin(), p.bn_running_mean.data.end());
    std::vector<real_t> rv(p.bn_running_var.data.begin(), p.bn_running_var.data.end());
    c.bn_out = num::batch_norm_eval(c.pre_bn, p.bn_gamma.value, p.bn_beta.value,
                                    rm, rv, kNormEps);
  }
  c.h0 = num::relu(c.bn_out);

  std::mt19937_64 rng(mask_seed);
  const bool drop_active = train_mode && p.cfg.dropout > 0;
  c.layers.clear();
  c.layers.resize(p.fu.size());
  const num::Tensor2* h_prev = &c.h0;
  for (std::size_t l = 0; l < p.fu.size(); ++l) {
    LayerCache& lc = c.layers[l];
    lc.pre_act = num::matmul(*h_prev, p.fu[l].w1.value);
    if (zspec)
      lc.pre_act = num::add(lc.pre_act, num::matmul(*zspec, p.fu[l].w2.value));
    lc.relu_out = num::relu(lc.pre_act);
    if (drop_active) {
      lc.dropout_mask =
          dropout_mask(lc.relu_out.rows, lc.relu_out.cols, p.cfg.dropout, rng);
      lc.dropped = num::hadamard(lc.relu_out, lc.dropout_mask);
    } else {
      lc.dropped = lc.relu_out;
    }
    lc.out = num::layer_norm(lc.dropped, p.fu[l].ln_gamma.value,
                             p.fu[l].ln_beta.value, kNormEps, &lc.ln);
    h_prev = &lc.out;
  }

  c.head_pre = num::add_row(num::matmul(*h_prev, p.head_w1.value), p.head_b1.value);
  c.head_h = num::relu(c.head_pre);
  c.logits = num::add_row(num::matmul(c.head_h, p.head_w2.value), p.head_b2.value);
  c.probs = num::rowwise_softmax(c.logits);
}

// Backward through everything below the spectral projection; returns dzspec
// (empty when zspec was null).
num::Tensor2 net_backward(FairNetParams& p, const num::Tensor2& x,
                          const num::Tensor2* zspec, const num::Tensor2& targets,
                          const ForwardCache& c) {
  const std::size_t n = x.rows;
  num::Tensor2 dlogits(n, p.num_classes);
  const real_t inv = real_t(1) / static_cast<real_t>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p.num_classes; ++j)
      dlogits(i, j) = (c.probs(i, j) - targets(i, j)) * inv;

  p.head_w2.grad = num::add(p.head_w2.grad,
                            num::matmul(num::transpose(c.head_h), dlogits));
  p.head_b2.grad = num::add(p.head_b2.grad, num::colsum(dlogits));
  num::Tensor2 dhead_h = num::matmul(dlogits, num::transpose(p.head_w2.value));
  num::Tensor2 dhead_pre = num::relu_backward(dhead_h, c.head_pre);
  const num::Tensor2& h_last = p.fu.empty() ? c.h0 : c.layers.back().out;
  p.head_w1.grad = num::add(p.head_w1.grad,
                            num::matmul(num::transpose(h_last), dhead_pre));
  p.head_b1.grad = num::add(p.head_b1.grad, num::colsum(dhead_pre));
  num::Tensor2 dh = num::matmul(dhead_pre, num::transpose(p.head_w1.value));

  num::Tensor2 dzspec;
  if (zspec) dzspec = num::Tensor2(zspec->rows, zspec->cols);
  for (std::size_t li = p.fu.size(); li-- > 0;) {
    const LayerCache& lc = c.layers[li];
    num::LayerNormGrads lng =
        num::layer_norm_backward(dh, lc.ln, p.fu[li].ln_gamma.value);
    p.fu[li].ln_gamma.grad = num::add(p.fu[li].ln_gamma.grad, lng.dgamma);
    p.fu[li].ln_beta.grad = num::add(p.fu[li].ln_beta.grad, lng.dbeta);
    num::Tensor2 drelu = lc.dropout_mask.empty()
                             ? std::move(lng.dx)
                             : num::hadamard(lng.dx, lc.dropout_mask);
    num::Tensor2 dpre = num::relu_backward(drelu, lc.pre_act);
    const num::Tensor2& h_prev = li == 0 ? c.h0 : c.layers[li - 1].out;
    p.fu[li].w1.grad = num::add(p.fu[li].w1.grad,
                                num::matmul(num::transpose(h_prev), dpre));
    if (zspec) {
      p.fu[li].w2.grad = num::add(p.fu[li].w2.grad,
                                  num::matmul(num::transpose(*zspec), dpre));
      dzspec = num::add(dzspec,
                        num::matmul(dpre, num::transpose(p.fu[li].w2.value)));
    }
    dh = num::matmul(dpre, num::transpose(p.fu[li].w1.value));
  }

  num::Tensor2 dbn_out = num::relu_backward(dh, c.bn_out);
  num::BatchNormGrads bng = num::batch_norm_backward(dbn_out, c.bn, p.bn_gamma.value);
  p.bn_gamma.grad = num::add(p.bn_gamma.grad, bng.dgamma);
  p.bn_beta.grad = num::add(p.bn_beta.grad, bng.dbeta);
  p.w0.grad = num::add(p.w0.grad, num::matmul(num::transpose(x), bng.dx));
  return dzspec;
}

struct Snapshot {
  std::vector<num::Tensor2> values;
  num::Tensor2 running_mean, running_var;
};

Snapshot take_snapshot(FairNetParams& p) {
  Snapshot s;
  for (num::ParamBlock* b : p.all_blocks()) s.values.push_back(b->value);
  s.running_mean = p.bn_running_mean;
  s.running_var = p.bn_running_var;
  return s;
}

void restore_snapshot(FairNetParams& p, const Snapshot& s) {
  std::size_t i = 0;
  for (num::ParamBlock* b : p.all_blocks()) b->value = s.values[i++];
  p.bn_running_mean = s.running_mean;
  p.bn_running_var = s.running_var;
}

std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  return fnv1a64(&epoch, sizeof(epoch), fnv1a64(&seed, sizeof(seed)));
}

// Epochs whose validation accuracy trails the best by more than this window
// are ignored when the guard envelope is formed. Without the window a
// degenerate early epoch (near-constant predictor, trivially tiny gaps) pins
// the envelope and locks every converged epoch out of eligibility.
constexpr real_t kComparableAccWindow = 0.05;

// Guarded model selection over the finished log. Returns the 1-based epoch,
// or 0 when no epoch has validation metrics. The fairness envelope is the
// smallest validation dSP+dEO among accuracy-comparable epochs; eligible
// epochs sit within 1.5x of it, and the most accurate eligible epoch wins.
// Accuracy ties prefer the fairer epoch, then the earlier one. Without the
// monitor there is no selection: the plain pipeline keeps the final epoch.
std::size_t select_epoch(const std::vector<EpochRecord>& records, bool guard) {
  if (!guard) return 0;
  const real_t inf = std::numeric_limits<real_t>::max();
  real_t acc_max = -1;
  for (const EpochRecord& r : records)
    if (r.val_accuracy) acc_max = std::max(acc_max, *r.val_accuracy);
  if (acc_max < 0) return 0;

  real_t env_min = inf;
  for (const EpochRecord& r : records) {
    if (!r.val_accuracy || *r.val_accuracy < acc_max - kComparableAccWindow)
      continue;
    if (r.val_delta_sp && r.val_delta_eo)
      env_min = std::min(env_min, *r.val_delta_sp + *r.val_delta_eo);
  }
  const real_t bound =
      env_min < inf ? real_t(1.5) * env_min + real_t(1e-12) : inf;

  std::size_t best = 0;
  real_t best_acc = -1, best_env = inf;
  for (const EpochRecord& r : records) {
    if (!r.val_accuracy) continue;
    const bool env_defined = r.val_delta_sp && r.val_delta_eo;
    const real_t env = env_defined ? *r.val_delta_sp + *r.val_delta_eo : inf;
    if (env_min < inf && (!env_defined || env > bound)) continue;
    if (*r.val_accuracy > best_acc ||
        (*r.val_accuracy == best_acc && env < best_env)) {
      best_acc = *r.val_accuracy;
      best_env = env;
      best = r.epoch;
    }
  }
  return best;
}

}  // namespace

void FairNetConfig::validate() const {
  if (layers < 1) throw ConfigError("fairnet: layers must be >= 1");
  if (hidden < 1) throw ConfigError("fairnet: hidden width must be >= 1");
  if (!(dropout >= 0 && dropout < 1))
    throw ConfigError("fairnet: dropout must lie in [0,1)");
  if (epochs < 1) throw ConfigError("fairnet: epochs must be >= 1");
  if (!(lr_max >= 0 && lr_min >= 0 && lr_min <= lr_max))
    throw ConfigError("fairnet: learning-rate range invalid");
  if (weight_decay < 0) throw ConfigError("fairnet: weight decay must be >= 0");
  if (!(smoothing >= 0 && smoothing < 1))
    throw ConfigError("fairnet: smoothing epsilon must lie in [0,1)");
  if (curriculum_epochs > epochs)
    throw ConfigError("fairnet: curriculum length exceeds epoch count");
  if (d_enc == 0 || d_enc % 2 != 0)
    throw ConfigError("fairnet: d_enc must be even and positive");
  if (heads == 0 || d_enc % heads != 0)
    throw ConfigError("fairnet: head count must divide d_enc");
}

FairNetParams::FairNetParams(std::size_t input_dim_, std::size_t num_classes_,
                             FairNetConfig cfg_)
    : cfg(cfg_), input_dim(input_dim_), num_classes(num_classes_) {
  cfg.validate();
  if (input_dim == 0) throw ConfigError("fairnet: zero input width");
  if (num_classes < 2) throw ConfigError("fairnet: need at least two classes");
  std::mt19937_64 rng(cfg.seed);
  auto init = [&rng](const std::string& name, std::size_t r, std::size_t c,
                     std::size_t fan_in) {
    num::Tensor2 t(r, c);
    const real_t bound = real_t(1) / std::sqrt(static_cast<real_t>(fan_in));
    std::uniform_real_distribution<real_t> dist(-bound, bound);
    for (real_t& v : t.data) v = dist(rng);
    return num::ParamBlock(name, std::move(t));
  };
  const std::size_t h = cfg.hidden;
  w0 = init("w0", input_dim, h, input_dim);
  bn_gamma = num::ParamBlock("bn_gamma", num::Tensor2(1, h, 1));
  bn_beta = num::ParamBlock("bn_beta", num::Tensor2(1, h));
  bn_running_mean = num::Tensor2(1, h);
  bn_running_var = num::Tensor2(1, h, 1);
  fu.resize(cfg.layers);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string base = "fu" + std::to_string(l) + ".";
    fu[l].w1 = init(base + "w1", h, h, h);
    fu[l].w2 = init(base + "w2", cfg.d_enc, h, cfg.d_enc);
    fu[l].ln_gamma = num::ParamBlock(base + "ln_gamma", num::Tensor2(1, h, 1));
    fu[l].ln_beta = num::ParamBlock(base + "ln_beta", num::Tensor2(1, h));
  }
  head_w1 = init("head.w1", h, h, h);
  head_b1 = num::ParamBlock("head.b1", num::Tensor2(1, h));
  head_w2 = init("head.w2", h, num_classes, h);
  head_b2 = num::ParamBlock("head.b2", num::Tensor2(1, num_classes));
  enc = spectral::SpectralEncoderParams(cfg.d_enc, cfg.heads, rng());
}

std::vector<num::ParamBlock*> FairNetParams::trainable() {
  std::vector<num::ParamBlock*> out = {&w0, &bn_gamma, &bn_beta};
  for (FuLayer& l : fu) {
    out.push_back(&l.w1);
    if (!cfg.disable_fairness) out.push_back(&l.w2);
    out.push_back(&l.ln_gamma);
    out.push_back(&l.ln_beta);
  }
  out.push_back(&head_w1);
  out.push_back(&head_b1);
  out.push_back(&head_w2);
  out.push_back(&head_b2);
  if (!cfg.disable_fairness && !cfg.frozen_spectral)
    for (num::ParamBlock* b : enc.params()) out.push_back(b);
  return out;
}

std::vector<num::ParamBlock*> FairNetParams::all_blocks() {
  std::vector<num::ParamBlock*> out = {&w0, &bn_gamma, &bn_beta};
  for (FuLayer& l : fu) {
    out.push_back(&l.w1);
    out.push_back(&l.w2);
    out.push_back(&l.ln_gamma);
    out.push_back(&l.ln_beta);
  }
  out.push_back(&head_w1);
  out.push_back(&head_b1);
  out.push_back(&head_w2);
  out.push_back(&head_b2);
  for (num::ParamBlock* b : enc.params()) out.push_back(b);
  return out;
}

num::Tensor2 smooth_labels(const std::vector<int>& labels, double eps,
                           std::size_t num_classes) {
  if (!(eps >= 0 && eps < 1))
    throw ConfigError("smooth_labels: epsilon must lie in [0,1)");
  if (num_classes == 0) throw ConfigError("smooth_labels: zero classes");
  num::Tensor2 t(labels.size(), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw DataError("smooth_labels: label outside class range");
    const auto yi = static_cast<std::size_t>(y);
    if (eps == 0) {
      t(i, yi) = 1;
      continue;
    }
    const real_t cold = static_cast<real_t>(eps) / static_cast<real_t>(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) t(i, c) = cold;
    t(i, yi) = (real_t(1) - static_cast<real_t>(eps)) + cold;
    const auto row_sum = [&] {
      real_t sum = 0;
      for (std::size_t c = 0; c < num_classes; ++c) sum += t(i, c);
      return sum;
    };
    // Push the rounding residual onto the hot entry, then finish with an ulp
    // walk on the row's final entry. Walking the hot entry can step the
    // rounded sum over 1 (one hot ulp can move the sum by two of its ulps),
    // but the final entry's ulp is at most one sum ulp, so this walk cannot
    // skip and terminates with an exact sum.
    real_t sum = row_sum();
    if (sum != 1) {
      t(i, yi) += real_t(1) - sum;
      sum = row_sum();
    }
    const std::size_t last = num_classes - 1;
    for (int iter = 0; sum != 1 && iter < 256; ++iter) {
      t(i, last) = std::nextafter(
          t(i, last), sum > 1 ? -std::numeric_limits<real_t>::infinity()
                              : std::numeric_limits<real_t>::infinity());
      sum = row_sum();
    }
    if (sum != 1)
      throw NumericError("smooth_labels: row failed to normalize exactly");
  }
  return t;
}

real_t soft_cross_entropy(const num::Tensor2& logits, const num::Tensor2& targets) {
  if (!logits.same_shape(targets) || logits.rows == 0)
    throw NumericError("dimension mismatch in soft_cross_entropy");
  real_t loss = 0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    real_t mx = logits(i, 0);
    for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max(mx, logits(i, j));
    real_t sum = 0;
    for (std::size_t j = 0; j < logits.cols; ++j) sum += std::exp(logits(i, j) - mx);
    const real_t lse = mx + std::log(sum);
    for (std::size_t j = 0; j < logits.cols; ++j)
      loss -= targets(i, j) * (logits(i, j) - lse);
  }
  return loss / static_cast<real_t>(logits.rows);
}

num::Tensor2 fulayer_forward(const FairNetParams& params, std::size_t layer,
                             const num::Tensor2& h_prev, const num::Tensor2* zspec,
                             bool train_mode, std::uint64_t mask_seed) {
  if (layer >= params.fu.size()) throw ConfigError("fulayer_forward: bad layer index");
  const FairNetParams::FuLayer& l = params.fu[layer];
  num::Tensor2 pre = num::matmul(h_prev, l.w1.value);
  if (zspec) pre = num::add(pre, num::matmul(*zspec, l.w2.value));
  num::Tensor2 r = num::relu(pre);
  if (train_mode && params.cfg.dropout > 0) {
    std::mt19937_64 rng(mask_seed);
    r = num::hadamard(r, dropout_mask(r.rows, r.cols, params.cfg.dropout, rng));
  }
  return num::layer_norm(r, l.ln_gamma.value, l.ln_beta.value, kNormEps, nullptr);
}

real_t train_step_loss(FairNetParams& params, const num::Tensor2& x,
                       const num::Tensor2& e0, const num::Tensor2& u,
                       const num::Tensor2& targets, std::uint64_t dropout_seed,
                       bool compute_grads, bool update_running_stats) {
  const bool fair = !params.cfg.disable_fairness;
  spectral::RefineCache rcache;
  num::Tensor2 zspec;
  if (fair) {
    num::Tensor2 e = spectral::refine_encodings(e0, params.enc, &rcache);
    zspec = num::matmul(u, e);
    if (zspec.rows != x.rows)
      throw NumericError("spectral projection rows do not match the batch");
  }
  ForwardCache cache;
  num::Tensor2 new_rm, new_rv;
  net_forward(params, x, fair ? &zspec : nullptr, true, dropout_seed, cache,
              update_running_stats ? &new_rm : nullptr,
              update_running_stats ? &new_rv : nullptr);
  const real_t loss = soft_cross_entropy(cache.logits, targets);
  if (update_running_stats) {
    params.bn_running_mean = std::move(new_rm);
    params.bn_running_var = std::move(new_rv);
  }
  if (!compute_grads) return loss;
  num::Tensor2 dzspec =
      net_backward(params, x, fair ? &zspec : nullptr, targets, cache);
  if (fair && !params.cfg.frozen_spectral) {
    num::Tensor2 de = num::matmul(num::transpose(u), dzspec);
    spectral::refine_backward(de, rcache, params.enc);
  }
  return loss;
}

num::Tensor2 predict(const FairNetParams& params, const num::Tensor2& x,
                     const num::Tensor2* zspec) {
  ForwardCache cache;
  const num::Tensor2* z = params.cfg.disable_fairness ? nullptr : zspec;
  net_forward(params, x, z, false, 0, cache, nullptr, nullptr);
  return cache.probs;
}

std::vector<int> argmax_labels(const num::Tensor2& probs) {
  std::vector<int> out(probs.rows);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < probs.cols; ++j)
      if (probs(i, j) > probs(i, arg)) arg = j;
    out[i] = static_cast<int>(arg);
  }
  return out;
}

num::Tensor2 compute_node_encodings(const FairNetParams& params,
                                    const spectral::SpectralBasis& basis) {
  num::Tensor2 e0 = spectral::sinusoidal_encode(basis.eigenvalues, params.cfg.d_enc);
  num::Tensor2 e = spectral::refine_encodings(e0, params.enc, nullptr);
  return num::matmul(basis.eigenvectors, e);
}

num::Tensor2 standardize(const num::Tensor2& x, const std::vector<real_t>& mean,
                         const std::vector<real_t>& stddev) {
  if (x.cols != mean.size() || x.cols != stddev.size())
    throw DataError("standardize: statistics width does not match features");
  num::Tensor2 out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j)
      out(i, j) = (x(i, j) - mean[j]) / (stddev[j] + real_t(1e-8));
  return out;
}

TrainLog train(FairNetParams& params, const condense::CondensedGraph& cg,
               const spectral::SpectralBasis& basis, const graph::Graph& eval_graph,
               const TrainOptions& opts) {
  params.cfg.validate();
  const FairNetConfig& cfg = params.cfg;
  if (cg.num_syn == 0 || cg.features.rows != cg.num_syn)
    throw DataError("train: malformed condensed graph");
  if (cg.features.cols != params.input_dim || cg.num_classes != params.num_classes)
    throw DataError("train: network shape does not match the condensed graph");
  const bool fair = !cfg.disable_fairness;
  num::Tensor2 e0, u;
  if (fair) {
    if (basis.eigenvectors.rows != cg.num_syn)
      throw DataError("train: spectral basis size does not match the condensed graph");
    if (basis.source_hash != 0 && basis.source_hash != cg.content_hash())
      throw DataError("train: spectral basis hash does not match the condensed graph");
    e0 = spectral::sinusoidal_encode(basis.eigenvalues, cfg.d_enc);
    u = basis.eigenvectors;
  }

  const num::Tensor2 hard = smooth_labels(cg.labels, 0, params.num_classes);
  const num::Tensor2 smoothed =
      smooth_labels(cg.labels, fair ? cfg.smoothing : 0, params.num_classes);

  num::OptimizerConfig ocfg = opts.adamw;
  ocfg.weight_decay = static_cast<real_t>(cfg.weight_decay);
  ocfg.clip_norm = 0;
  num::AdamOptimizer opt(num::AdamOptimizer::Mode::AdamW, ocfg);
  std::vector<num::ParamBlock*> blocks = params.trainable();

  const bool has_val = !eval_graph.val_idx.empty();
  num::Tensor2 x_val;
  std::vector<int> y_val, s_val;
  if (has_val) {
    if (eval_graph.features.cols != params.input_dim)
      throw DataError("train: evaluation graph feature width mismatch");
    num::Tensor2 raw(eval_graph.val_idx.size(), eval_graph.features.cols);
    for (std::size_t r = 0; r < eval_graph.val_idx.size(); ++r) {
      const std::uint32_t idx = eval_graph.val_idx[r];
      for (std::size_t j = 0; j < raw.cols; ++j)
        raw(r, j) = eval_graph.features(idx, j);
      y_val.push_back(eval_graph.labels[idx]);
      s_val.push_back(eval_graph.sensitive[idx]);
    }
    x_val = standardize(raw, cg.feature_mean, cg.feature_std);
  }

  TrainLog log;
  std::vector<Snapshot> snapshots;  // per epoch, for post-hoc selection
  snapshots.reserve(cfg.epochs);
  const bool guard = fair;  // fairness-blind ablation keeps the final epoch

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const real_t lr = num::cosine_lr(static_cast<long>(epoch - 1),
                                     static_cast<long>(cfg.epochs),
                                     static_cast<real_t>(cfg.lr_max),
                                     static_cast<real_t>(cfg.lr_min));
    opt.set_lr(lr);
    const bool curriculum =
        fair && cfg.smoothing > 0 && epoch <= cfg.curriculum_epochs;
    const num::Tensor2& targets = curriculum ? smoothed : hard;
    for (num::ParamBlock* b : params.all_blocks()) b->zero_grad();
    const real_t loss = train_step_loss(params, cg.features, e0, u, targets,
                                        epoch_seed(cfg.seed, epoch), true, true);
    if (!std::isfinite(loss))
      throw NumericError("training loss non-finite at epoch " + std::to_string(epoch));
    opt.step(blocks);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss;
    rec.lr = lr;
    rec.curriculum = curriculum;
    if (has_val) {
      const num::Tensor2 probs = predict(params, x_val, nullptr);
      const std::vector<int> preds = argmax_labels(probs);
      rec.val_accuracy = metrics::accuracy(preds, y_val);
      try {
        const std::vector<int> groups =
            metrics::binarize_groups(s_val, opts.group_partition);
        rec.val_delta_sp = metrics::delta_sp(preds, groups, opts.positive_class);
        rec.val_delta_eo =
            metrics::delta_eo(preds, y_val, groups, opts.positive_class);
      } catch (const DataError&) {
        // Metric undefined on this split; leave the record blank rather than
        // logging a fake zero.
        rec.val_delta_sp.reset();
        rec.val_delta_eo.reset();
      }
    }
    log.records.push_back(rec);
    snapshots.push_back(take_snapshot(params));
  }
  log.best_epoch = select_epoch(log.records, guard);
  if (log.best_epoch > 0)
    restore_snapshot(params, snapshots[log.best_epoch - 1]);
  else
    log.best_epoch = cfg.epochs;  // no monitor or no validation: final epoch
  return log;
}

namespace {

std::string trainlog_csv(const TrainLog& log) {
  std::ostringstream os;
  os << "epoch,loss,lr,val_acc,val_sp,val_eo,phase\n";
  for (const EpochRecord& r : log.records) {
    auto opt_str = [](const std::optional<real_t>& v) {
      return v ? format_real(*v) : std::string("nan");
    };
    os << r.epoch << ',' << format_real(r.loss) << ',' << format_real(r.lr) << ','
       << opt_str(r.val_accuracy) << ',' << opt_str(r.val_delta_sp) << ','
       << opt_str(r.val_delta_eo) << ',' << (r.curriculum ? "curriculum" : "nll")
       << '\n';
  }
  return os.str();
}

// Inverse of trainlog_csv. A literal "nan" cell reads back as an absent
// metric, matching how train() records epochs whose validation metrics are
// undefined.
std::vector<EpochRecord> trainlog_records_from_csv(const std::string& text,
                                                   const std::string& origin) {
  std::vector<EpochRecord> records;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) ||
      line != "epoch,loss,lr,val_acc,val_sp,val_eo,phase")
    throw DataError(origin + ": unrecognized trainlog header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) throw DataError(origin + ": malformed trainlog row");
    auto opt = [](const std::string& s) -> std::optional<real_t> {
      if (s == "nan") return std::nullopt;
      return std::strtod(s.c_str(), nullptr);
    };
    EpochRecord r;
    r.epoch = static_cast<std::size_t>(std::stoull(cells[0]));
    r.loss = std::strtod(cells[1].c_str(), nullptr);
    r.lr = std::strtod(cells[2].c_str(), nullptr);
    r.val_accuracy = opt(cells[3]);
    r.val_delta_sp = opt(cells[4]);
    r.val_delta_eo = opt(cells[5]);
    r.curriculum = cells[6] == "curriculum";
    records.push_back(r);
  }
  return records;
}

json config_to_json(const FairNetConfig& cfg) {
  json j;
  j["layers"] = cfg.layers;
  j["hidden"] = cfg.hidden;
  j["dropout"] = cfg.dropout;
  j["epochs"] = cfg.epochs;
  j["lr_max"] = cfg.lr_max;
  j["lr_min"] = cfg.lr_min;
  j["weight_decay"] = cfg.weight_decay;
  j["smoothing"] = cfg.smoothing;
  j["curriculum_epochs"] = cfg.curriculum_epochs;
  j["d_enc"] = cfg.d_enc;
  j["heads"] = cfg.heads;
  j["disable_fairness"] = cfg.disable_fairness;
  j["frozen_spectral"] = cfg.frozen_spectral;
  j["seed"] = cfg.seed;
  return j;
}

FairNetConfig config_from_json(const json& j) {
  FairNetConfig cfg;
  cfg.layers = j.at("layers").get<std::size_t>();
  cfg.hidden = j.at("hidden").get<std::size_t>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.epochs = j.at("epochs").get<std::size_t>();
  cfg.lr_max = j.at("lr_max").get<double>();
  cfg.lr_min = j.at("lr_min").get<double>();
  cfg.weight_decay = j.at("weight_decay").get<double>();
  cfg.smoothing = j.at("smoothing").get<double>();
  cfg.curriculum_epochs = j.at("curriculum_epochs").get<std::size_t>();
  cfg.d_enc = j.at("d_enc").get<std::size_t>();
  cfg.heads = j.at("heads").get<std::size_t>();
  cfg.disable_fairness = j.at("disable_fairness").get<bool>();
  cfg.frozen_spectral = j.at("frozen_spectral").get<bool>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

}  // namespace

void save_checkpoint(const FairNetParams& params, const TrainLog& log,
                     std::uint64_t condensed_hash, const std::string& dir) {
  FairNetParams& p = const_cast<FairNetParams&>(params);  // block list access only
  json files = json::object();
  for (num::ParamBlock* b : p.all_blocks()) {
    const std::string rel = "weights/" + b->name + ".csv";
    const std::string text = io::tensor_csv_text(b->value, "v");
    files[rel] = hash_hex(fnv1a64(text));
    io::write_text_file_atomic(dir + "/" + rel, text);
  }
  const std::string rm_text = io::tensor_csv_text(params.bn_running_mean, "v");
  const std::string rv_text = io::tensor_csv_text(params.bn_running_var, "v");
  files["weights/bn_running_mean.csv"] = hash_hex(fnv1a64(rm_text));
  files["weights/bn_running_var.csv"] = hash_hex(fnv1a64(rv_text));
  io::write_text_file_atomic(dir + "/weights/bn_running_mean.csv", rm_text);
  io::write_text_file_atomic(dir + "/weights/bn_running_var.csv", rv_text);
  const std::string log_text = trainlog_csv(log);
  files["trainlog.csv"] = hash_hex(fnv1a64(log_text));
  io::write_text_file_atomic(dir + "/trainlog.csv", log_text);

  json manifest;
  manifest["type"] = "checkpoint";
  manifest["format_version"] = 1;
  manifest["condensed_hash"] = hash_hex(condensed_hash);
  manifest["input_dim"] = params.input_dim;
  manifest["num_classes"] = params.num_classes;
  manifest["best_epoch"] = log.best_epoch;
  manifest["config"] = config_to_json(params.cfg);
  manifest["files"] = files;
  io::write_text_file_atomic(dir + "/manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& dir) {
  json manifest;
  try {
    manifest = json::parse(io::read_text_file(dir + "/manifest.json"));
  } catch (const json::exception& e) {
    throw DataError(dir + "/manifest.json: " + e.what());
  }
  Checkpoint ck;
  try {
    for (const auto& [name, hash] : manifest.at("files").items()) {
      const std::string text = io::read_text_file(dir + "/" + name);
      if (hash_hex(fnv1a64(text)) != hash.get<std::string>())
        throw DataError(dir + "/" + name + ": content does not match manifest hash");
    }
    const FairNetConfig cfg = config_from_json(manifest.at("config"));
    ck.params = FairNetParams(manifest.at("input_dim").get<std::size_t>(),
                              manifest.at("num_classes").get<std::size_t>(), cfg);
    ck.condensed_hash =
        std::stoull(manifest.at("condensed_hash").get<std::string>(), nullptr, 16);
    ck.log.best_epoch = manifest.at("best_epoch").get<std::size_t>();
  } catch (const json::exception& e) {
    throw DataError(dir + "/manifest.json: " + e.what());
  }
  for (num::ParamBlock* b : ck.params.all_blocks()) {
    num::Tensor2 t = io::read_tensor_csv(dir + "/weights/" + b->name + ".csv");
    if (!t.same_shape(b->value))
      throw DataError(dir + ": weight shape mismatch for block " + b->name);
    b->value = std::move(t);
  }
  ck.params.bn_running_mean = io::read_tensor_csv(dir + "/weights/bn_running_mean.csv");
  ck.params.bn_running_var = io::read_tensor_csv(dir + "/weights/bn_running_var.csv");
  ck.log.records = trainlog_records_from_csv(io::read_text_file(dir + "/trainlog.csv"),
                                             dir + "/trainlog.csv");
  return ck;
}

}  // namespace fairgc::fairnet

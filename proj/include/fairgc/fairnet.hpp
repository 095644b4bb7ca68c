#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fairgc/condenser.hpp"
#include "fairgc/graph.hpp"
#include "fairgc/optim.hpp"
#include "fairgc/spectral.hpp"
#include "fairgc/tensor.hpp"

namespace fairgc::fairnet {

struct FairNetConfig {
  std::size_t layers = 2;  // L fusion layers
  std::size_t hidden = 64;
  double dropout = 0.5;
  std::size_t epochs = 300;  // T
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  double weight_decay = 5e-4;
  double smoothing = 0.1;              // label-smoothing epsilon
  std::size_t curriculum_epochs = 40;  // smoothed-target phase length
  std::size_t d_enc = 64;
  std::size_t heads = 4;
  // Plain MLP ablation: no spectral term, no smoothing curriculum, no
  // fairness-guarded model selection.
  bool disable_fairness = false;
  // Keep the refinement block at its random initialization.
  bool frozen_spectral = false;
  std::uint64_t seed = 1;

  void validate() const;
};

// All trainable state of the downstream classifier, plus batch-norm running
// statistics (not trained, but part of the checkpoint).
struct FairNetParams {
  struct FuLayer {
    num::ParamBlock w1, w2, ln_gamma, ln_beta;
  };

  FairNetConfig cfg;
  std::size_t input_dim = 0, num_classes = 0;

  num::ParamBlock w0;                   // input_dim × hidden
  num::ParamBlock bn_gamma, bn_beta;    // 1 × hidden
  num::Tensor2 bn_running_mean, bn_running_var;  // 1 × hidden
  std::vector<FuLayer> fu;              // cfg.layers entries
  num::ParamBlock head_w1, head_b1, head_w2, head_b2;
  spectral::SpectralEncoderParams enc;

  FairNetParams() = default;
  FairNetParams(std::size_t input_dim, std::size_t num_classes, FairNetConfig cfg);

  // Blocks the optimizer updates; honors disable_fairness (drops W2 and the
  // refinement block) and frozen_spectral (drops the refinement block).
  std::vector<num::ParamBlock*> trainable();
  // Every block, for checkpoints and diagnostics.
  std::vector<num::ParamBlock*> all_blocks();
};

// (1-eps) one-hot + eps/C, rows corrected to sum to 1 exactly.
num::Tensor2 smooth_labels(const std::vector<int>& labels, double eps,
                           std::size_t num_classes);

// Mean cross-entropy of soft targets under row-softmax of the logits,
// computed through log-sum-exp. With one-hot targets this is exactly the
// hard-label negative log-likelihood.
real_t soft_cross_entropy(const num::Tensor2& logits, const num::Tensor2& targets);

// Single fusion layer, exposed for verification. zspec may be null (zero
// spectral contribution). Dropout draws a seeded mask in train mode.
num::Tensor2 fulayer_forward(const FairNetParams& params, std::size_t layer,
                             const num::Tensor2& h_prev, const num::Tensor2* zspec,
                             bool train_mode, std::uint64_t mask_seed);

// Full train-mode forward and (optionally) backward. e0/u are the sinusoidal
// encodings and eigenvector basis; ignored when fairness is disabled. Returns
// the loss; gradients accumulate into the parameter blocks.
real_t train_step_loss(FairNetParams& params, const num::Tensor2& x,
                       const num::Tensor2& e0, const num::Tensor2& u,
                       const num::Tensor2& targets, std::uint64_t dropout_seed,
                       bool compute_grads, bool update_running_stats);

// Eval-mode class probabilities. zspec null means the zero-vector spectral
// fallback used for original-graph nodes.
num::Tensor2 predict(const FairNetParams& params, const num::Tensor2& x,
                     const num::Tensor2* zspec = nullptr);

std::vector<int> argmax_labels(const num::Tensor2& probs);

// Z_spec for the condensed nodes through the current refinement block.
num::Tensor2 compute_node_encodings(const FairNetParams& params,
                                    const spectral::SpectralBasis& basis);

// (x - mean) / (std + 1e-8) with the condensation Z-score statistics, so
// original-graph features land in the space the network was trained in.
num::Tensor2 standardize(const num::Tensor2& x, const std::vector<real_t>& mean,
                         const std::vector<real_t>& stddev);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  real_t loss = 0;
  real_t lr = 0;
  bool curriculum = false;  // smoothed-target phase
  std::optional<real_t> val_accuracy, val_delta_sp, val_delta_eo;
};

struct TrainLog {
  std::vector<EpochRecord> records;
  std::size_t best_epoch = 0;
};

struct TrainOptions {
  num::OptimizerConfig adamw;  // lr is overwritten by the cosine schedule
  int positive_class = 1;
  std::vector<int> group_partition;
};

// Trains on the condensed graph; validates each epoch on the original
// graph's val split (zero-Z_spec protocol). Returns the log; params end at
// the selected best epoch: highest validation accuracy among epochs whose
// dSP+dEO is within 1.5x the fairness envelope, where the envelope is the
// smallest dSP+dEO among epochs with accuracy within 0.05 of the best.
// Accuracy ties prefer the fairer epoch, then the earlier one. The monitor
// is the selection mechanism: with disable_fairness (or without a
// validation split) training keeps the final epoch's parameters.
TrainLog train(FairNetParams& params, const condense::CondensedGraph& cg,
               const spectral::SpectralBasis& basis, const graph::Graph& eval_graph,
               const TrainOptions& opts);

// Checkpoint: manifest.json + weights/*.csv + trainlog.csv.
void save_checkpoint(const FairNetParams& params, const TrainLog& log,
                     std::uint64_t condensed_hash, const std::string& dir);
struct Checkpoint {
  FairNetParams params;
  TrainLog log;
  std::uint64_t condensed_hash = 0;
};
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace fairgc::fairnet

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fairgc/condenser.hpp"
#include "fairgc/fairnet.hpp"
#include "fairgc/graph.hpp"
#include "fairgc/metrics.hpp"
#include "fairgc/spectral.hpp"

namespace fairgc::pipeline {

inline constexpr const char* kToolVersion = "fairgc 0.1.0";

// Every knob of the pipeline, one flat struct. Defaults here are the single
// source of hyperparameter truth; the config file and --set overrides only
// ever change these fields.
struct PipelineConfig {
  // Dataset
  std::string nodes_path;
  std::string edges_path;
  std::string split_file;  // optional (id,split) CSV; empty: seeded split
  std::string id_column = "id";
  std::string label_column = "label";
  std::string sensitive_column = "sensitive";
  std::vector<std::string> feature_columns;  // empty: all remaining columns
  double train_frac = 0.5, val_frac = 0.25, test_frac = 0.25;
  std::uint64_t seed = 1;

  // Phase 1: condensation
  double rho = 0.05;
  std::size_t proxy_steps = 200;
  double proxy_lr = 0.01;
  double proxy_clip = 1.0;
  std::size_t proxy_hidden = 64;
  std::size_t k_sparse = 5;
  std::size_t k_dense = 0;  // 0: max(10, ceil(source mean degree))
  std::size_t sparse_threshold = 20000;
  bool joint_allocation = true;
  bool random_coreset = false;  // uniform node sample instead of Phase 1

  // Phase 2: spectral encodings
  std::size_t spectral_k = 0;  // 0: min(32, n_syn)
  std::size_t d_enc = 64;
  std::size_t heads = 4;
  bool spectral_largest = false;  // take the top of the spectrum instead
  bool frozen_spectral = false;

  // Phase 3: classifier
  std::size_t layers = 2;
  std::size_t hidden = 64;
  double dropout = 0.5;
  std::size_t epochs = 300;
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  double weight_decay = 5e-4;
  double smoothing = 0.1;
  std::size_t curriculum_epochs = 40;
  bool disable_fairness = false;

  // Evaluation
  int positive_class = 1;
  std::vector<int> group_partition;  // empty: groups must already be binary
  std::size_t eval_seeds = 5;

  void validate() const;
  std::string to_json() const;
};

// key = value lines, # comments. Unknown keys are config errors.
PipelineConfig load_config(const std::string& path);
void apply_override(PipelineConfig& cfg, const std::string& key,
                    const std::string& value);

// Stochastic block model benchmark: 2 classes x 2 groups, sensitive attribute
// agreeing with the label w.p. (1+gamma)/2, intra-block edge probability
// scaled by homophily h. Writes nodes.csv / edges.txt in the loader's formats.
struct SyntheticSpec {
  std::size_t n = 0;
  double gamma = 0;      // label/sensitive correlation strength, [0,1]
  double homophily = 0;  // intra-block edge share, [0,1]
  std::uint64_t seed = 1;
  std::size_t feature_dim = 16;
  double mean_degree = 10;
};
void make_synthetic(const SyntheticSpec& spec, const std::string& out_dir);

// In-memory phase runners, shared by the disk commands and multi-seed
// evaluation. The graph must already carry splits.
graph::Graph load_dataset(const PipelineConfig& cfg);
condense::CondensedGraph condense_graph(const PipelineConfig& cfg,
                                        const graph::Graph& g);
spectral::SpectralBasis spectral_phase(const PipelineConfig& cfg,
                                       const condense::CondensedGraph& cg,
                                       const std::string& cache_dir);
fairnet::TrainLog train_phase(const PipelineConfig& cfg,
                              const condense::CondensedGraph& cg,
                              const spectral::SpectralBasis& basis,
                              const graph::Graph& g, fairnet::FairNetParams& params);

// Disk commands. Each writes into out_dir atomically (work happens in a
// sibling .partial directory, renamed on success) and records run.json with
// the config snapshot and artifact hashes, plus timings.json (excluded from
// run.json so artifact bytes stay deterministic).
void run_condense(const PipelineConfig& cfg, const std::string& out_dir);
void run_train(const PipelineConfig& cfg, const std::string& condensed_dir,
               const std::string& out_dir);

struct EvalOutcome {
  std::string table;  // rendered ACC(%) / dSP(%) / dEO(%) block
  std::string json;
};
// Single-checkpoint evaluation on the original test split.
EvalOutcome run_evaluate(const PipelineConfig& cfg, const std::string& checkpoint_dir,
                         const std::string& condensed_dir,
                         const std::string& out_dir);
// Full-pipeline evaluation over eval_seeds seeds (seed, seed+1, ...); reports
// per-seed rows and mean +/- sample std.
EvalOutcome run_evaluate_seeds(const PipelineConfig& cfg, const std::string& out_dir);

struct AuditOutcome {
  std::string table;
  std::string json;
  bool ok = false;  // no marginal gap above the 1/n_syn bound
};
AuditOutcome run_audit(const PipelineConfig& cfg, const std::string& condensed_dir,
                       const std::string& out_dir);

// Basis cache root: FAIRGC_CACHE_DIR when set, else <condensed_dir>/basis.
std::string basis_cache_dir(const std::string& condensed_dir);

}  // namespace fairgc::pipeline

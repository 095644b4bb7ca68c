#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fairgc/tensor.hpp"

namespace fairgc::num {

// A named parameter tensor paired with its gradient accumulator.
struct ParamBlock {
  std::string name;
  Tensor2 value;
  Tensor2 grad;

  ParamBlock() = default;
  ParamBlock(std::string n, Tensor2 v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows, value.cols) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), real_t(0)); }
};

struct OptimizerConfig {
  real_t lr = 1e-3;
  real_t beta1 = 0.9;
  real_t beta2 = 0.999;
  real_t eps = 1e-8;
  real_t weight_decay = 0;  // decoupled, AdamW only
  real_t clip_norm = 0;     // global-norm clip before the moment update, Adam only
};

// Adam / AdamW over a fixed set of parameter blocks. First and second moment
// accumulators mirror the block shapes; the block list must be identical on
// every step.
class AdamOptimizer {
 public:
  enum class Mode { Adam, AdamW };

  AdamOptimizer(Mode mode, OptimizerConfig cfg);

  void set_lr(real_t lr) { cfg_.lr = lr; }
  long step_count() const { return t_; }
  const OptimizerConfig& config() const { return cfg_; }

  void step(const std::vector<ParamBlock*>& params);

 private:
  Mode mode_;
  OptimizerConfig cfg_;
  long t_ = 0;
  std::vector<Tensor2> m_, v_;
};

// lr_min + 0.5 (lr_max - lr_min)(1 + cos(pi t / T)); t > T clamps to lr_min.
real_t cosine_lr(long step, long total, real_t lr_max, real_t lr_min);

struct GradCheckReport {
  real_t max_rel_error = 0;
  std::string block;
  std::size_t index = 0;
};

// Central finite differences per coordinate against the analytic gradient.
// loss() recomputes the objective from current block values; compute_grads()
// fills block.grad. Relative error uses max(|analytic|, |numeric|, 1e-4) as
// denominator so coordinates whose gradient sits below finite-difference
// noise do not dominate the report.
GradCheckReport grad_check(const std::function<real_t()>& loss,
                           const std::function<void()>& compute_grads,
                           const std::vector<ParamBlock*>& params,
                           real_t epsilon = 1e-5);

}  // namespace fairgc::num

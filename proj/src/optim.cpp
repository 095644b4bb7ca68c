#include "fairgc/optim.hpp"

#include <cmath>

namespace fairgc::num {

AdamOptimizer::AdamOptimizer(Mode mode, OptimizerConfig cfg)
    : mode_(mode), cfg_(cfg) {
  if (mode_ == Mode::Adam && cfg_.clip_norm <= 0)
    throw ConfigError("Adam requires a positive clip norm");
  if (cfg_.lr < 0) throw ConfigError("negative learning rate");
}

void AdamOptimizer::step(const std::vector<ParamBlock*>& params) {
  if (m_.empty()) {
    for (const ParamBlock* p : params) {
      m_.emplace_back(p->value.rows, p->value.cols);
      v_.emplace_back(p->value.rows, p->value.cols);
    }
  }
  if (m_.size() != params.size())
    throw NumericError("optimizer state does not match parameter list");

  for (const ParamBlock* p : params)
    for (real_t g : p->grad.data)
      if (!std::isfinite(g))
        throw NumericError("non-finite gradient in parameter block '" + p->name + "'");

  real_t clip_scale = 1;
  if (mode_ == Mode::Adam && cfg_.clip_norm > 0) {
    real_t sq = 0;
    for (const ParamBlock* p : params)
      for (real_t g : p->grad.data) sq += g * g;
    const real_t norm = std::sqrt(sq);
    if (norm > cfg_.clip_norm) clip_scale = cfg_.clip_norm / norm;
  }

  ++t_;
  const real_t bc1 = 1 - std::pow(cfg_.beta1, static_cast<real_t>(t_));
  const real_t bc2 = 1 - std::pow(cfg_.beta2, static_cast<real_t>(t_));
  for (std::size_t b = 0; b < params.size(); ++b) {
    ParamBlock& p = *params[b];
    Tensor2& m = m_[b];
    Tensor2& v = v_[b];
    if (!m.same_shape(p.value))
      throw NumericError("optimizer state shape mismatch for block '" + p.name + "'");
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const real_t g = p.grad.data[i] * clip_scale;
      m.data[i] = cfg_.beta1 * m.data[i] + (1 - cfg_.beta1) * g;
      v.data[i] = cfg_.beta2 * v.data[i] + (1 - cfg_.beta2) * g * g;
      const real_t mhat = m.data[i] / bc1;
      const real_t vhat = v.data[i] / bc2;
      if (mode_ == Mode::AdamW && cfg_.weight_decay > 0)
        p.value.data[i] -= cfg_.lr * cfg_.weight_decay * p.value.data[i];
      p.value.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

real_t cosine_lr(long step, long total, real_t lr_max, real_t lr_min) {
  if (total < 1) throw ConfigError("cosine_lr: total steps must be >= 1");
  if (step < 0) throw ConfigError("cosine_lr: negative step");
  if (step > total) return lr_min;
  const real_t phase = static_cast<real_t>(step) / static_cast<real_t>(total);
  return lr_min + real_t(0.5) * (lr_max - lr_min) *
                      (1 + std::cos(real_t(M_PI) * phase));
}

GradCheckReport grad_check(const std::function<real_t()>& loss,
                           const std::function<void()>& compute_grads,
                           const std::vector<ParamBlock*>& params,
                           real_t epsilon) {
  compute_grads();
  std::vector<Tensor2> analytic;
  analytic.reserve(params.size());
  for (const ParamBlock* p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  for (std::size_t b = 0; b < params.size(); ++b) {
    ParamBlock& p = *params[b];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const real_t saved = p.value.data[i];
      p.value.data[i] = saved + epsilon;
      const real_t up = loss();
      p.value.data[i] = saved - epsilon;
      const real_t down = loss();
      p.value.data[i] = saved;
      const real_t numeric = (up - down) / (2 * epsilon);
      const real_t a = analytic[b].data[i];
      const real_t denom =
          std::max({std::abs(a), std::abs(numeric), real_t(1e-4)});
      const real_t rel = std::abs(a - numeric) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.block = p.name;
        report.index = i;
      }
    }
  }
  return report;
}

}  // namespace fairgc::num

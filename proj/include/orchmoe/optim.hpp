#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "orchmoe/errors.hpp"
#include "orchmoe/tensor.hpp"

namespace orchmoe {

// AdamW with decoupled weight decay and a linear warmup / linear decay
// learning-rate schedule. Moments are stored per parameter tensor in the
// order the tensors were registered.
struct OptimizerState {
  double lr_max = 5e-5;
  double weight_decay = 0.01;
  double warmup_ratio = 0.06;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t total_steps = 0;
  std::size_t step = 0;
  std::vector<std::vector<double>> m;  // first moments
  std::vector<std::vector<double>> v;  // second moments
};

inline OptimizerState init_optimizer(const std::vector<Tensor>& params, std::size_t total_steps,
                                     double lr_max = 5e-5, double weight_decay = 0.01,
                                     double warmup_ratio = 0.06) {
  if (total_steps < 1) throw ContractError("init_optimizer: total_steps must be at least 1");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0))
    throw ContractError("init_optimizer: warmup_ratio must lie in [0, 1)");
  OptimizerState s;
  s.lr_max = lr_max;
  s.weight_decay = weight_decay;
  s.warmup_ratio = warmup_ratio;
  s.total_steps = total_steps;
  for (const Tensor& p : params) {
    s.m.emplace_back(p.size(), 0.0);
    s.v.emplace_back(p.size(), 0.0);
  }
  return s;
}

// Piecewise-linear schedule: 0 -> lr_max over the warmup span, then linear
// back down to 0 at total_steps.
inline double lr_at(std::size_t step, const OptimizerState& s) {
  if (step > s.total_steps)
    throw ContractError("lr_at: step " + std::to_string(step) + " exceeds total_steps " +
                        std::to_string(s.total_steps));
  const double total = static_cast<double>(s.total_steps);
  const double warmup = s.warmup_ratio * total;
  const double t = static_cast<double>(step);
  if (warmup > 0.0 && t <= warmup) return s.lr_max * t / warmup;
  if (total <= warmup) return s.lr_max;
  return s.lr_max * (total - t) / (total - warmup);
}

inline void adamw_step(std::vector<Tensor>& params, OptimizerState& s) {
  if (params.size() != s.m.size())
    throw ContractError("adamw_step: optimizer was initialised for " +
                        std::to_string(s.m.size()) + " tensors, got " +
                        std::to_string(params.size()));
  s.step += 1;
  const double lr = lr_at(std::min(s.step, s.total_steps), s);
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.has_grad())
      throw ContractError("adamw_step: parameter tensor " + std::to_string(i) +
                          " has no gradient");
    if (p.size() != s.m[i].size())
      throw ContractError("adamw_step: parameter tensor " + std::to_string(i) +
                          " changed size since init");
    const std::vector<double>& g = p.grad();
    for (std::size_t j = 0; j < p.size(); ++j) {
      s.m[i][j] = s.beta1 * s.m[i][j] + (1.0 - s.beta1) * g[j];
      s.v[i][j] = s.beta2 * s.v[i][j] + (1.0 - s.beta2) * g[j] * g[j];
      const double m_hat = s.m[i][j] / bc1;
      const double v_hat = s.v[i][j] / bc2;
      double& w = p.data()[j];
      w -= lr * m_hat / (std::sqrt(v_hat) + s.eps);
      w -= lr * s.weight_decay * w;  // decoupled decay on the parameter itself
    }
  }
}

}  // namespace orchmoe

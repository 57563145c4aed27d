#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "orchmoe/errors.hpp"
#include "orchmoe/rng.hpp"
#include "orchmoe/tensor.hpp"

namespace orchmoe {

// Uniform noise is clamped away from {0, 1} before its logit is taken.
inline constexpr double kNoiseClamp = 1e-7;

// Learnable task-by-skill allocation logits. Sampling relaxes the implied
// binary allocation to a differentiable value in (0, 1).
struct SkillAllocation {
  Tensor logits;  // T x S
  std::size_t task_count = 0;
  std::size_t skill_count = 0;
};

inline SkillAllocation init_skill_allocation(std::size_t task_count, std::size_t skill_count) {
  if (task_count < 1 || skill_count < 1)
    throw ContractError("init_skill_allocation: T and S must be at least 1");
  SkillAllocation a;
  a.task_count = task_count;
  a.skill_count = skill_count;
  a.logits = Tensor::zeros(task_count, skill_count);  // sigma(0) = 0.5, uncommitted
  return a;
}

// Gumbel-sigmoid relaxation of a Bernoulli gate:
//   sigma(log[ sigma(w) u / ((1 - sigma(w)) (1 - u)) ])
// Equals sigma(w + logit(u)); differentiable in w for fixed u.
inline double gumbel_sigmoid(double w, double u) {
  if (!(u > 0.0 && u < 1.0))
    throw ContractError("gumbel_sigmoid: u must lie in (0, 1), got " + std::to_string(u));
  const double sw = sigmoid_scalar(w);
  const double ratio = (sw * u) / ((1.0 - sw) * (1.0 - u));
  return sigmoid_scalar(std::log(ratio));
}

// Per-entry noise logits for one sampling step; the stream is counter-based,
// so entry (t, s) always receives the same draw for a given (seed, layer,
// step) key.
inline Tensor sample_noise_logits(const SkillAllocation& alloc, const RngStream& stream) {
  Tensor noise = Tensor::zeros(alloc.task_count, alloc.skill_count);
  for (std::size_t t = 0; t < alloc.task_count; ++t)
    for (std::size_t s = 0; s < alloc.skill_count; ++s) {
      double u = stream.uniform(t, s);
      u = std::clamp(u, kNoiseClamp, 1.0 - kNoiseClamp);
      noise.at(t, s) = std::log(u / (1.0 - u));
    }
  return noise;
}

// Relaxed-binary sample of the allocation matrix. The noise enters as a
// constant, so gradients flow to the logits through the sigmoid.
inline Tensor sample_allocation(const SkillAllocation& alloc, const RngStream& stream) {
  return sigmoid(add(alloc.logits, sample_noise_logits(alloc, stream)));
}

// Deterministic evaluation-time allocation: sigma(logits), the median of the
// sampling distribution.
inline Tensor eval_allocation(const SkillAllocation& alloc) { return sigmoid(alloc.logits); }

}  // namespace orchmoe

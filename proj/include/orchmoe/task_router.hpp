#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "orchmoe/errors.hpp"
#include "orchmoe/rng.hpp"
#include "orchmoe/tensor.hpp"

namespace orchmoe {

// Learned task head: an affine map from the pooled attention mix to T
// abstract-task logits.
struct TaskRouterParams {
  Tensor w_task;  // d_k x T
  Tensor bias;    // 1 x T
  std::size_t d_k = 0;
  std::size_t task_count = 0;
};

inline TaskRouterParams init_task_router(std::size_t d_k, std::size_t task_count,
                                         std::uint64_t seed) {
  if (d_k < 1 || task_count < 1)
    throw ContractError("init_task_router: d_k and T must be at least 1");
  TaskRouterParams p;
  p.d_k = d_k;
  p.task_count = task_count;
  p.w_task = Tensor::zeros(d_k, task_count);
  p.bias = Tensor::zeros(1, task_count);
  std::mt19937_64 eng = make_engine(seed, 0x7461736b);
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(d_k)));
  for (double& v : p.w_task.data()) v = gauss(eng);
  return p;
}

// Parameter-free token mixing with a residual:
//   softmax(x x^T / sqrt(d_k)) x + x
inline Tensor attention_mix(const Tensor& x) {
  if (x.rows() < 1) throw ContractError("attention_mix: need at least one token row");
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  Tensor scores = scale(matmul(x, transpose(x)), inv_sqrt_dk);
  Tensor mixed = matmul(softmax_rows(scores), x);
  return add(mixed, x);
}

// Mean-pool the mixed tokens to one vector per sample, then apply the
// affine head: [n x d_k] -> [1 x T].
inline Tensor task_logits(const Tensor& x_hat, const TaskRouterParams& params) {
  if (x_hat.cols() != params.d_k)
    throw ShapeError("task_logits: input width " + std::to_string(x_hat.cols()) +
                     " does not match d_k " + std::to_string(params.d_k));
  Tensor pooled = mean_rows(x_hat);
  return add(matmul(pooled, params.w_task), params.bias);
}

// Softmax over the T logits; the per-sample mixture weights over abstract
// tasks.
inline Tensor task_weights(const Tensor& logits) { return softmax_rows(logits); }

}  // namespace orchmoe

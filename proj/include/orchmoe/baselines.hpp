#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "orchmoe/errors.hpp"
#include "orchmoe/rng.hpp"
#include "orchmoe/tensor.hpp"

namespace orchmoe {

// Input-independent learnable gates, identical for every sample.
struct SharedRouter {
  Tensor weights;  // 1 x S
  std::size_t skill_count = 0;
};

inline SharedRouter init_shared_router(std::size_t skill_count) {
  if (skill_count < 1) throw ContractError("init_shared_router: S must be at least 1");
  SharedRouter r;
  r.skill_count = skill_count;
  r.weights = Tensor::zeros(1, skill_count);  // uniform gates at start
  return r;
}

inline Tensor shared_route(const SharedRouter& router) { return softmax_rows(router.weights); }

// One learnable routing row per ground-truth task ID.
struct TaskIdRouter {
  Tensor table;  // T_real x S
  std::size_t real_task_count = 0;
  std::size_t skill_count = 0;
};

inline TaskIdRouter init_task_id_router(std::size_t real_task_count, std::size_t skill_count) {
  if (real_task_count < 1 || skill_count < 1)
    throw ContractError("init_task_id_router: T_real and S must be at least 1");
  TaskIdRouter r;
  r.real_task_count = real_task_count;
  r.skill_count = skill_count;
  r.table = Tensor::zeros(real_task_count, skill_count);
  return r;
}

inline Tensor task_id_route(const TaskIdRouter& router, std::size_t task_id) {
  if (task_id >= router.real_task_count)
    throw ContractError("task_id_route: task id " + std::to_string(task_id) +
                        " out of range, table has " + std::to_string(router.real_task_count) +
                        " rows");
  return softmax_rows(row(router.table, task_id));
}

// Per-token gating through a single-layer projection; only the k
// highest-scoring skills stay active.
struct TopKRouter {
  Tensor proj;  // d x S
  std::size_t dim = 0;
  std::size_t skill_count = 0;
  std::size_t k = 0;
};

inline TopKRouter init_topk_router(std::size_t dim, std::size_t skill_count, std::size_t k,
                                   std::uint64_t seed) {
  if (k < 1 || k > skill_count)
    throw ContractError("init_topk_router: k " + std::to_string(k) +
                        " must satisfy 1 <= k <= S = " + std::to_string(skill_count));
  TopKRouter r;
  r.dim = dim;
  r.skill_count = skill_count;
  r.k = k;
  r.proj = Tensor::zeros(dim, skill_count);
  std::mt19937_64 eng = make_engine(seed, 0x746f706b);
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  for (double& v : r.proj.data()) v = gauss(eng);
  return r;
}

// Indices of the k largest logits; ties break toward the lowest index.
inline std::vector<std::size_t> topk_indices(const Tensor& logits, std::size_t k) {
  std::vector<std::size_t> order(logits.cols());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return logits.at(0, a) > logits.at(0, b);
  });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

// Gates for one token: softmax over the kept top-k logits, exact zeros
// elsewhere. Dropped entries are pushed to -inf territory before the
// softmax, so they underflow to 0 and take no gradient.
inline Tensor topk_route(const TopKRouter& router, const Tensor& token) {
  if (router.k < 1 || router.k > router.skill_count)
    throw ContractError("topk_route: k out of range");
  if (token.rows() != 1 || token.cols() != router.dim)
    throw ShapeError("topk_route: token must be 1x" + std::to_string(router.dim) + ", got " +
                     detail::shape_str(*token.node()));
  Tensor logits = matmul(token, router.proj);  // 1 x S
  std::vector<std::size_t> keep = topk_indices(logits, router.k);
  Tensor mask = Tensor::zeros(1, router.skill_count);
  for (double& v : mask.data()) v = -1e30;
  for (std::size_t idx : keep) mask.at(0, idx) = 0.0;
  return softmax_rows(add(logits, mask));
}

}  // namespace orchmoe

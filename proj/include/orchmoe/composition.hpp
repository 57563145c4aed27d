#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "orchmoe/errors.hpp"
#include "orchmoe/lora.hpp"
#include "orchmoe/rng.hpp"
#include "orchmoe/skill_router.hpp"
#include "orchmoe/task_router.hpp"
#include "orchmoe/tensor.hpp"

namespace orchmoe {

enum class ForwardMode { train, eval };

// A frozen square projection plus a bank of S rank-r skills, gated per
// sample by the task router and the sampled task-skill allocation.
struct OrchMoeLayer {
  Tensor w0;  // d x d, frozen
  std::vector<LoraAdapter> skills;
  TaskRouterParams task_router;
  SkillAllocation skill_alloc;
  std::size_t dim = 0;
  std::size_t task_count = 0;
  std::size_t skill_count = 0;
  std::size_t rank = 0;
};

inline OrchMoeLayer init_orchmoe_layer(Tensor w0, std::size_t task_count,
                                       std::size_t skill_count, std::size_t rank,
                                       std::uint64_t seed) {
  if (w0.rows() != w0.cols()) throw ShapeError("init_orchmoe_layer: base must be square");
  if (task_count < 1 || skill_count < 1)
    throw ContractError("init_orchmoe_layer: T and S must be at least 1");
  OrchMoeLayer layer;
  layer.dim = w0.rows();
  layer.task_count = task_count;
  layer.skill_count = skill_count;
  layer.rank = rank;
  layer.w0 = std::move(w0);
  layer.w0.detach();
  for (std::size_t j = 0; j < skill_count; ++j)
    layer.skills.push_back(init_adapter(layer.dim, rank, hash_combine(seed, j + 1)));
  layer.task_router = init_task_router(layer.dim, task_count, hash_combine(seed, 0x726f7574));
  layer.skill_alloc = init_skill_allocation(task_count, skill_count);
  return layer;
}

// Effective per-skill gates for one sample: the task-weight vector times the
// allocation matrix. Factoring the double sum this way costs one pass over
// the skills instead of T passes.
inline Tensor orchmoe_gates(const Tensor& x, const OrchMoeLayer& layer, ForwardMode mode,
                            const RngStream* stream) {
  Tensor w = task_weights(task_logits(attention_mix(x), layer.task_router));  // 1 x T
  Tensor alloc = (mode == ForwardMode::train) ? sample_allocation(layer.skill_alloc, *stream)
                                              : eval_allocation(layer.skill_alloc);  // T x S
  return matmul(w, alloc);  // 1 x S
}

// Base projection plus the gated sum of skill updates, all through the
// low-rank factors. `stream` is required in train mode and ignored in eval.
inline Tensor orchmoe_forward(const Tensor& x, const OrchMoeLayer& layer, ForwardMode mode,
                              const RngStream* stream = nullptr) {
  if (x.rows() == 0) throw ContractError("orchmoe_forward: empty input (0 token rows)");
  if (x.cols() != layer.dim)
    throw ShapeError("orchmoe_forward: input width " + std::to_string(x.cols()) +
                     " does not match layer dim " + std::to_string(layer.dim));
  if (mode == ForwardMode::train && stream == nullptr)
    throw ContractError("orchmoe_forward: train mode requires an rng stream");

  Tensor gates = orchmoe_gates(x, layer, mode, stream);
  Tensor out = matmul(x, transpose(layer.w0));
  for (std::size_t j = 0; j < layer.skill_count; ++j) {
    Tensor mid = matmul(x, transpose(layer.skills[j].up));
    Tensor update = matmul(mid, transpose(layer.skills[j].down));
    out = add(out, scale_by_entry(update, gates, j));
  }
  return out;
}

// S*2rd adapter entries + d*T + T router head + T*S allocation logits. The
// frozen base is excluded.
inline std::size_t trainable_param_count(const OrchMoeLayer& layer) {
  std::size_t skills = 0;
  for (const LoraAdapter& a : layer.skills) skills += 2 * a.rank * a.dim;
  return skills + layer.dim * layer.task_count + layer.task_count +
         layer.task_count * layer.skill_count;
}

// Ensures the base projection stays out of the tape and the optimizer list.
inline void freeze_base(OrchMoeLayer& layer) { layer.w0.detach(); }

// Trainable leaves in checkpoint order.
inline std::vector<Tensor> trainable_tensors(OrchMoeLayer& layer) {
  std::vector<Tensor> out;
  for (LoraAdapter& a : layer.skills) {
    out.push_back(a.down);
    out.push_back(a.up);
  }
  out.push_back(layer.task_router.w_task);
  out.push_back(layer.task_router.bias);
  out.push_back(layer.skill_alloc.logits);
  return out;
}

}  // namespace orchmoe

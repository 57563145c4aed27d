#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "orchmoe/baselines.hpp"
#include "orchmoe/composition.hpp"
#include "orchmoe/errors.hpp"
#include "orchmoe/synthetic.hpp"

namespace orchmoe {

enum class Architecture { orchmoe, lora, moe_lora_topk, task_id, shared };

inline Architecture parse_architecture(const std::string& s) {
  if (s == "orchmoe") return Architecture::orchmoe;
  if (s == "lora") return Architecture::lora;
  if (s == "moe-lora-topk") return Architecture::moe_lora_topk;
  if (s == "task-id") return Architecture::task_id;
  if (s == "shared") return Architecture::shared;
  throw ContractError("unknown architecture '" + s +
                      "' (expected orchmoe | lora | moe-lora-topk | task-id | shared)");
}

inline std::string architecture_name(Architecture a) {
  switch (a) {
    case Architecture::orchmoe: return "orchmoe";
    case Architecture::lora: return "lora";
    case Architecture::moe_lora_topk: return "moe-lora-topk";
    case Architecture::task_id: return "task-id";
    case Architecture::shared: return "shared";
  }
  throw ContractError("architecture_name: bad enum value");
}

// Per-projection trainable count of the composed architecture; baselines are
// sized against this budget so comparisons hold parameter counts fixed.
inline std::size_t composed_budget(std::size_t d, std::size_t t, std::size_t s, std::size_t r) {
  return s * 2 * r * d + d * t + t + t * s;
}

inline std::size_t matched_single_rank(std::size_t d, std::size_t budget) {
  const double r = static_cast<double>(budget) / (2.0 * d);
  const auto rounded = static_cast<std::size_t>(std::llround(r));
  return std::max<std::size_t>(1, std::min(rounded, d - 1));
}

// Spread `budget - router_params` over S adapters as evenly as possible,
// giving the spare ranks to the lowest skill indices.
inline std::vector<std::size_t> matched_skill_ranks(std::size_t d, std::size_t s,
                                                    std::size_t router_params,
                                                    std::size_t budget) {
  const double adapter_budget =
      budget > router_params ? static_cast<double>(budget - router_params) : 0.0;
  std::size_t total = static_cast<std::size_t>(std::llround(adapter_budget / (2.0 * d)));
  total = std::max(total, s);  // at least rank 1 per skill
  std::vector<std::size_t> ranks(s, total / s);
  for (std::size_t i = 0; i < total % s; ++i) ranks[i] += 1;
  for (std::size_t& r : ranks) r = std::min(r, d - 1);
  return ranks;
}

// One square projection slot. Exactly one routing scheme is live, chosen by
// `arch`; the composed variant delegates to its own layer type.
struct ProjLayer {
  Architecture arch = Architecture::orchmoe;
  OrchMoeLayer moe;
  Tensor w0;  // frozen base for the non-composed variants
  std::vector<LoraAdapter> skills;
  TopKRouter topk;
  TaskIdRouter id_router;
  SharedRouter shared;
};

struct Model {
  Architecture arch = Architecture::orchmoe;
  std::size_t dim = 0;
  std::size_t depth = 0;
  std::size_t abstract_tasks = 0;  // T seen by the composed router
  std::size_t skill_count = 0;
  std::size_t rank = 0;
  std::size_t topk_k = 0;
  std::size_t real_tasks = 0;  // ground-truth IDs for the id-routed baseline
  std::vector<ProjLayer> layers;  // one per projection slot
};

namespace detail {

inline Tensor clone_tensor(const Tensor& t) {
  return Tensor::from(t.rows(), t.cols(), t.data());
}

inline ProjLayer init_proj_layer(Architecture arch, const Tensor& base, std::size_t t,
                                 std::size_t s, std::size_t r, std::size_t k,
                                 std::size_t t_real, std::uint64_t seed) {
  const std::size_t d = base.rows();
  const std::size_t budget = composed_budget(d, t, s, r);
  ProjLayer layer;
  layer.arch = arch;
  if (arch == Architecture::orchmoe) {
    layer.moe = init_orchmoe_layer(clone_tensor(base), t, s, r, seed);
    return layer;
  }
  layer.w0 = clone_tensor(base);
  layer.w0.detach();
  std::vector<std::size_t> ranks;
  switch (arch) {
    case Architecture::lora:
      ranks = {matched_single_rank(d, budget)};
      break;
    case Architecture::moe_lora_topk:
      ranks = matched_skill_ranks(d, s, d * s, budget);
      layer.topk = init_topk_router(d, s, k, hash_combine(seed, 0x746f706b));
      break;
    case Architecture::task_id:
      ranks = matched_skill_ranks(d, s, t_real * s, budget);
      layer.id_router = init_task_id_router(t_real, s);
      break;
    case Architecture::shared:
      ranks = matched_skill_ranks(d, s, s, budget);
      layer.shared = init_shared_router(s);
      break;
    default:
      throw ContractError("init_proj_layer: bad architecture");
  }
  for (std::size_t j = 0; j < ranks.size(); ++j)
    layer.skills.push_back(init_adapter(d, ranks[j], hash_combine(seed, j + 1)));
  return layer;
}

}  // namespace detail

// `base_weights` come from the task suite, so the frozen backbone matches
// the teachers' backbone exactly.
inline Model init_model(Architecture arch, const std::vector<Tensor>& base_weights,
                        std::size_t depth, std::size_t t, std::size_t s, std::size_t r,
                        std::size_t k, std::size_t t_real, std::uint64_t seed) {
  if (base_weights.size() != kSlotsPerBlock * depth)
    throw ContractError("init_model: expected " + std::to_string(kSlotsPerBlock * depth) +
                        " base projections, got " + std::to_string(base_weights.size()));
  Model m;
  m.arch = arch;
  m.dim = base_weights.front().rows();
  m.depth = depth;
  m.abstract_tasks = t;
  m.skill_count = s;
  m.rank = r;
  m.topk_k = k;
  m.real_tasks = t_real;
  for (std::size_t slot = 0; slot < base_weights.size(); ++slot) {
    if (base_weights[slot].rows() != m.dim || base_weights[slot].cols() != m.dim)
      throw ShapeError("init_model: base projection " + std::to_string(slot) +
                       " is not square of the model dim");
    m.layers.push_back(detail::init_proj_layer(arch, base_weights[slot], t, s, r, k, t_real,
                                               hash_combine(seed, slot)));
  }
  return m;
}

// Base projection plus the gated low-rank updates, shared by every routed
// baseline; `gates` is 1 x S.
inline Tensor gated_skill_sum(const Tensor& x, const Tensor& w0,
                              const std::vector<LoraAdapter>& skills, const Tensor& gates) {
  Tensor out = matmul(x, transpose(w0));
  for (std::size_t j = 0; j < skills.size(); ++j) {
    Tensor update = matmul(matmul(x, transpose(skills[j].up)), transpose(skills[j].down));
    out = add(out, scale_by_entry(update, gates, j));
  }
  return out;
}

inline Tensor proj_forward(const ProjLayer& layer, const Tensor& x, ForwardMode mode,
                           const RngStream* stream, std::size_t task_id) {
  switch (layer.arch) {
    case Architecture::orchmoe:
      return orchmoe_forward(x, layer.moe, mode, stream);
    case Architecture::lora:
      return lora_forward(x, layer.w0, layer.skills[0]);
    case Architecture::task_id:
      return gated_skill_sum(x, layer.w0, layer.skills,
                             task_id_route(layer.id_router, task_id));
    case Architecture::shared:
      return gated_skill_sum(x, layer.w0, layer.skills, shared_route(layer.shared));
    case Architecture::moe_lora_topk: {
      // token-level expert choice: each token routes independently
      std::vector<Tensor> out_rows;
      for (std::size_t i = 0; i < x.rows(); ++i) {
        Tensor xi = row(x, i);
        out_rows.push_back(gated_skill_sum(xi, layer.w0, layer.skills,
                                           topk_route(layer.topk, xi)));
      }
      return concat_rows(out_rows);
    }
  }
  throw ContractError("proj_forward: bad architecture");
}

// Full backbone pass. `noise_seed`/`step` key the allocation sampling in
// train mode (slot index separates the per-layer streams); `task_id` feeds
// only the id-routed baseline.
inline Tensor model_forward(const Model& m, const Tensor& x, ForwardMode mode,
                            std::size_t task_id, std::uint64_t noise_seed = 0,
                            std::uint64_t step = 0) {
  return backbone_forward(x, m.depth, [&](const Tensor& h, std::size_t slot) {
    RngStream stream{noise_seed, slot, step};
    return proj_forward(m.layers[slot], h, mode, &stream, task_id);
  });
}

inline std::vector<Tensor> model_trainable(Model& m) {
  std::vector<Tensor> out;
  for (ProjLayer& layer : m.layers) {
    if (layer.arch == Architecture::orchmoe) {
      for (Tensor& t : trainable_tensors(layer.moe)) out.push_back(t);
      continue;
    }
    for (LoraAdapter& a : layer.skills) {
      out.push_back(a.down);
      out.push_back(a.up);
    }
    switch (layer.arch) {
      case Architecture::moe_lora_topk: out.push_back(layer.topk.proj); break;
      case Architecture::task_id: out.push_back(layer.id_router.table); break;
      case Architecture::shared: out.push_back(layer.shared.weights); break;
      default: break;
    }
  }
  return out;
}

// Router-side tensors only: what transfer adaptation may touch while the
// skill bank and base stay frozen. Plain LoRA has none.
inline std::vector<Tensor> model_router_tensors(Model& m) {
  std::vector<Tensor> out;
  for (ProjLayer& layer : m.layers) {
    switch (layer.arch) {
      case Architecture::orchmoe:
        out.push_back(layer.moe.task_router.w_task);
        out.push_back(layer.moe.task_router.bias);
        out.push_back(layer.moe.skill_alloc.logits);
        break;
      case Architecture::moe_lora_topk: out.push_back(layer.topk.proj); break;
      case Architecture::task_id: out.push_back(layer.id_router.table); break;
      case Architecture::shared: out.push_back(layer.shared.weights); break;
      case Architecture::lora: break;
    }
  }
  return out;
}

inline std::size_t model_param_count(Model& m) {
  std::size_t n = 0;
  for (Tensor& t : model_trainable(m)) n += t.size();
  return n;
}

// Deep copy: fresh storage for every tensor, so adapting or mutating the
// clone never touches the original (plain struct copies share handles).
inline Model clone_model(const Model& m) {
  Model out = m;
  for (ProjLayer& layer : out.layers) {
    if (layer.arch == Architecture::orchmoe) {
      layer.moe.w0 = detail::clone_tensor(layer.moe.w0);
      for (LoraAdapter& a : layer.moe.skills) {
        a.down = detail::clone_tensor(a.down);
        a.up = detail::clone_tensor(a.up);
      }
      layer.moe.task_router.w_task = detail::clone_tensor(layer.moe.task_router.w_task);
      layer.moe.task_router.bias = detail::clone_tensor(layer.moe.task_router.bias);
      layer.moe.skill_alloc.logits = detail::clone_tensor(layer.moe.skill_alloc.logits);
      continue;
    }
    layer.w0 = detail::clone_tensor(layer.w0);
    for (LoraAdapter& a : layer.skills) {
      a.down = detail::clone_tensor(a.down);
      a.up = detail::clone_tensor(a.up);
    }
    switch (layer.arch) {
      case Architecture::moe_lora_topk:
        layer.topk.proj = detail::clone_tensor(layer.topk.proj);
        break;
      case Architecture::task_id:
        layer.id_router.table = detail::clone_tensor(layer.id_router.table);
        break;
      case Architecture::shared:
        layer.shared.weights = detail::clone_tensor(layer.shared.weights);
        break;
      default:
        break;
    }
  }
  return out;
}

// Every tensor in checkpoint order, frozen bases included.
inline std::vector<std::pair<std::string, Tensor>> model_named_params(Model& m) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t slot = 0; slot < m.layers.size(); ++slot) {
    ProjLayer& layer = m.layers[slot];
    const std::string pre = "layer" + std::to_string(slot) + ".";
    if (layer.arch == Architecture::orchmoe) {
      out.emplace_back(pre + "base", layer.moe.w0);
      for (std::size_t j = 0; j < layer.moe.skills.size(); ++j) {
        out.emplace_back(pre + "skill" + std::to_string(j) + ".down", layer.moe.skills[j].down);
        out.emplace_back(pre + "skill" + std::to_string(j) + ".up", layer.moe.skills[j].up);
      }
      out.emplace_back(pre + "router.head", layer.moe.task_router.w_task);
      out.emplace_back(pre + "router.bias", layer.moe.task_router.bias);
      out.emplace_back(pre + "alloc", layer.moe.skill_alloc.logits);
      continue;
    }
    out.emplace_back(pre + "base", layer.w0);
    for (std::size_t j = 0; j < layer.skills.size(); ++j) {
      out.emplace_back(pre + "skill" + std::to_string(j) + ".down", layer.skills[j].down);
      out.emplace_back(pre + "skill" + std::to_string(j) + ".up", layer.skills[j].up);
    }
    switch (layer.arch) {
      case Architecture::moe_lora_topk: out.emplace_back(pre + "router.proj", layer.topk.proj); break;
      case Architecture::task_id: out.emplace_back(pre + "router.table", layer.id_router.table); break;
      case Architecture::shared: out.emplace_back(pre + "router.weights", layer.shared.weights); break;
      default: break;
    }
  }
  return out;
}

}  // namespace orchmoe

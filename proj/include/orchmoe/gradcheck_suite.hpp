#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "orchmoe/baselines.hpp"
#include "orchmoe/composition.hpp"
#include "orchmoe/finite_diff.hpp"
#include "orchmoe/model.hpp"

namespace orchmoe {

namespace detail {

inline Tensor gc_rand(std::size_t rows, std::size_t cols, std::mt19937_64& eng, double lo = -1.0,
                      double hi = 1.0) {
  Tensor t = Tensor::zeros(rows, cols);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data()) v = dist(eng);
  return t;
}

}  // namespace detail

// The registered finite-difference checks: every differentiable op, the
// adapters and routers, the full composed layer in both modes, and the full
// model. Each case owns its probe point and a loss closure over it.
inline std::vector<GradCheckCase> standard_gradcheck_cases(std::uint64_t seed = 1234) {
  std::mt19937_64 eng(seed);
  std::vector<GradCheckCase> cases;

  {
    Tensor a = detail::gc_rand(3, 4, eng), b = detail::gc_rand(4, 2, eng);
    cases.push_back({"matmul.left", a, [b](Tensor& p) {
                       return sum_all(hadamard(matmul(p, b), matmul(p, b)));
                     }});
    cases.push_back({"matmul.right", b, [a](Tensor& p) {
                       return sum_all(hadamard(matmul(a, p), matmul(a, p)));
                     }});
  }
  {
    Tensor a = detail::gc_rand(3, 4, eng), b = detail::gc_rand(4, 3, eng);
    cases.push_back({"transpose", a, [b](Tensor& p) {
                       Tensor out = matmul(transpose(p), transpose(b));
                       return sum_all(hadamard(out, out));
                     }});
  }
  {
    Tensor a = detail::gc_rand(2, 5, eng), b = detail::gc_rand(2, 5, eng);
    cases.push_back({"add", a, [b](Tensor& p) {
                       Tensor out = add(p, b);
                       return sum_all(hadamard(out, out));
                     }});
    cases.push_back({"sub", a, [b](Tensor& p) {
                       Tensor out = sub(b, p);
                       return sum_all(hadamard(out, out));
                     }});
    cases.push_back({"hadamard", a, [b](Tensor& p) {
                       return sum_all(hadamard(hadamard(p, b), p));
                     }});
    cases.push_back({"scale", a, [](Tensor& p) {
                       Tensor out = scale(p, -1.7);
                       return sum_all(hadamard(out, out));
                     }});
  }
  {
    Tensor a = detail::gc_rand(3, 5, eng, -2.0, 2.0);
    Tensor coef = detail::gc_rand(3, 5, eng);
    cases.push_back({"softmax_rows", a, [coef](Tensor& p) {
                       return sum_all(hadamard(softmax_rows(p), coef));
                     }});
    cases.push_back({"sigmoid", a, [coef](Tensor& p) {
                       return sum_all(hadamard(sigmoid(p), coef));
                     }});
    cases.push_back({"mean_rows", a, [](Tensor& p) {
                       Tensor m = mean_rows(p);
                       return sum_all(hadamard(m, m));
                     }});
  }
  {
    Tensor m = detail::gc_rand(2, 4, eng);
    Tensor gates = detail::gc_rand(1, 3, eng);
    cases.push_back({"scale_by_entry.matrix", m, [gates](Tensor& p) {
                       Tensor out = scale_by_entry(p, gates, 1);
                       return sum_all(hadamard(out, out));
                     }});
    cases.push_back({"scale_by_entry.gates", gates, [m](Tensor& p) {
                       Tensor out = scale_by_entry(m, p, 1);
                       return sum_all(hadamard(out, out));
                     }});
    cases.push_back({"row_concat", m, [](Tensor& p) {
                       Tensor stacked = concat_rows({row(p, 1), row(p, 0)});
                       return sum_all(hadamard(stacked, stacked));
                     }});
  }
  {
    Tensor w0 = detail::gc_rand(5, 5, eng);
    Tensor x = detail::gc_rand(3, 5, eng);
    Tensor target = detail::gc_rand(3, 5, eng);
    LoraAdapter base = init_adapter(5, 2, eng());
    for (double& v : base.up.data()) v = 0.3 * (eng() % 7 ? 1.0 : -1.0);
    auto loss = [w0, x, target](const LoraAdapter& a) {
      Tensor e = sub(lora_forward(x, w0, a), target);
      return sum_all(hadamard(e, e));
    };
    cases.push_back({"lora.down", base.down, [base, loss](Tensor& p) {
                       return loss(LoraAdapter{p, base.up, base.dim, base.rank});
                     }});
    cases.push_back({"lora.up", base.up, [base, loss](Tensor& p) {
                       return loss(LoraAdapter{base.down, p, base.dim, base.rank});
                     }});
  }
  {
    TaskRouterParams base = init_task_router(4, 3, eng());
    Tensor x = detail::gc_rand(3, 4, eng);
    Tensor coef = detail::gc_rand(1, 3, eng);
    auto loss = [x, coef](const TaskRouterParams& p) {
      Tensor w = task_weights(task_logits(attention_mix(x), p));
      return sum_all(hadamard(w, coef));
    };
    cases.push_back({"task_router.head", base.w_task, [base, loss](Tensor& p) {
                       return loss(TaskRouterParams{p, base.bias, base.d_k, base.task_count});
                     }});
    cases.push_back({"task_router.bias", base.bias, [base, loss](Tensor& p) {
                       return loss(TaskRouterParams{base.w_task, p, base.d_k, base.task_count});
                     }});
    cases.push_back({"task_router.input", x, [base, coef](Tensor& p) {
                       Tensor w = task_weights(task_logits(attention_mix(p), base));
                       return sum_all(hadamard(w, coef));
                     }});
  }
  {
    SkillAllocation base = init_skill_allocation(3, 4);
    for (double& v : base.logits.data())
      v = std::uniform_real_distribution<double>(-1.5, 1.5)(eng);
    RngStream stream{seed, 2, 5};
    cases.push_back({"skill_alloc.sample", base.logits, [stream](Tensor& p) {
                       SkillAllocation a{p, 3, 4};
                       Tensor s = sample_allocation(a, stream);
                       return sum_all(hadamard(s, s));
                     }});
    cases.push_back({"skill_alloc.eval", base.logits, [](Tensor& p) {
                       SkillAllocation a{p, 3, 4};
                       Tensor s = eval_allocation(a);
                       return sum_all(hadamard(s, s));
                     }});
  }
  {
    SharedRouter shared = init_shared_router(4);
    for (double& v : shared.weights.data())
      v = std::uniform_real_distribution<double>(-1.0, 1.0)(eng);
    cases.push_back({"baseline.shared", shared.weights, [](Tensor& p) {
                       Tensor g = shared_route(SharedRouter{p, 4});
                       return sum_all(hadamard(g, g));
                     }});
    TaskIdRouter id_router = init_task_id_router(3, 4);
    for (double& v : id_router.table.data())
      v = std::uniform_real_distribution<double>(-1.0, 1.0)(eng);
    cases.push_back({"baseline.task_id", id_router.table, [](Tensor& p) {
                       Tensor g = task_id_route(TaskIdRouter{p, 3, 4}, 1);
                       return sum_all(hadamard(g, g));
                     }});
    TopKRouter topk = init_topk_router(5, 4, 2, eng());
    Tensor token = detail::gc_rand(1, 5, eng);
    cases.push_back({"baseline.topk", topk.proj, [token](Tensor& p) {
                       Tensor g = topk_route(TopKRouter{p, 5, 4, 2}, token);
                       return sum_all(hadamard(g, g));
                     }});
  }

  // The full composed layer, probing one tensor of each kind in both modes.
  {
    OrchMoeLayer base = init_orchmoe_layer(detail::gc_rand(4, 4, eng), 2, 3, 2, eng());
    for (LoraAdapter& a : base.skills)
      for (double& v : a.up.data())
        v = 0.3 * std::uniform_real_distribution<double>(-1.0, 1.0)(eng);
    for (double& v : base.skill_alloc.logits.data())
      v = std::uniform_real_distribution<double>(-1.5, 1.5)(eng);
    Tensor x = detail::gc_rand(2, 4, eng);
    Tensor target = detail::gc_rand(2, 4, eng);
    RngStream stream{seed, 0, 9};
    for (ForwardMode mode : {ForwardMode::eval, ForwardMode::train}) {
      const std::string tag = mode == ForwardMode::eval ? "layer_eval." : "layer_train.";
      auto loss = [x, target, mode, stream](const OrchMoeLayer& layer) {
        RngStream s = stream;
        Tensor e = sub(orchmoe_forward(x, layer, mode, &s), target);
        return sum_all(hadamard(e, e));
      };
      cases.push_back({tag + "skill_down", base.skills[1].down, [base, loss](Tensor& p) {
                         OrchMoeLayer l = base;
                         l.skills[1].down = p;
                         return loss(l);
                       }});
      cases.push_back({tag + "skill_up", base.skills[0].up, [base, loss](Tensor& p) {
                         OrchMoeLayer l = base;
                         l.skills[0].up = p;
                         return loss(l);
                       }});
      cases.push_back({tag + "router_head", base.task_router.w_task, [base, loss](Tensor& p) {
                         OrchMoeLayer l = base;
                         l.task_router.w_task = p;
                         return loss(l);
                       }});
      cases.push_back({tag + "router_bias", base.task_router.bias, [base, loss](Tensor& p) {
                         OrchMoeLayer l = base;
                         l.task_router.bias = p;
                         return loss(l);
                       }});
      cases.push_back({tag + "alloc", base.skill_alloc.logits, [base, loss](Tensor& p) {
                         OrchMoeLayer l = base;
                         l.skill_alloc.logits = p;
                         return loss(l);
                       }});
    }
  }

  // End-to-end through the attention backbone.
  {
    std::vector<Tensor> bases;
    for (int i = 0; i < 3; ++i) bases.push_back(detail::gc_rand(4, 4, eng, -0.5, 0.5));
    Model base = init_model(Architecture::orchmoe, bases, 1, 2, 3, 2, 2, 2, eng());
    for (ProjLayer& layer : base.layers) {
      for (LoraAdapter& a : layer.moe.skills)
        for (double& v : a.up.data())
          v = 0.2 * std::uniform_real_distribution<double>(-1.0, 1.0)(eng);
      for (double& v : layer.moe.skill_alloc.logits.data())
        v = std::uniform_real_distribution<double>(-1.0, 1.0)(eng);
    }
    Tensor x = detail::gc_rand(2, 4, eng);
    Tensor target = detail::gc_rand(2, 4, eng);
    auto loss = [x, target](const Model& m, ForwardMode mode) {
      Tensor e = sub(model_forward(m, x, mode, 0, 77, 3), target);
      return sum_all(hadamard(e, e));
    };
    cases.push_back({"model_train.alloc", base.layers[0].moe.skill_alloc.logits,
                     [base, loss](Tensor& p) {
                       Model m = base;
                       m.layers[0].moe.skill_alloc.logits = p;
                       return loss(m, ForwardMode::train);
                     }});
    cases.push_back({"model_train.skill_up", base.layers[1].moe.skills[2].up,
                     [base, loss](Tensor& p) {
                       Model m = base;
                       m.layers[1].moe.skills[2].up = p;
                       return loss(m, ForwardMode::train);
                     }});
    cases.push_back({"model_eval.router_head", base.layers[2].moe.task_router.w_task,
                     [base, loss](Tensor& p) {
                       Model m = base;
                       m.layers[2].moe.task_router.w_task = p;
                       return loss(m, ForwardMode::eval);
                     }});
  }

  return cases;
}

}  // namespace orchmoe

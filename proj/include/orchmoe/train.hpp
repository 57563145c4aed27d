#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "orchmoe/analysis.hpp"
#include "orchmoe/config.hpp"
#include "orchmoe/errors.hpp"
#include "orchmoe/model.hpp"
#include "orchmoe/optim.hpp"
#include "orchmoe/synthetic.hpp"

namespace orchmoe {

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean batch loss over the epoch
  std::vector<double> eval_per_task;
  double eval_mean = 0.0;
};

struct RunReport {
  RunConfig config;
  std::size_t trainable_params = 0;
  std::vector<double> loss_curve;  // one entry per optimizer step
  std::vector<EpochStats> epochs;
  std::vector<double> final_eval_per_task;
  double final_eval_mean = 0.0;
  std::vector<AllocationSnapshot> snapshots;  // composed architecture only
};

struct TrainResult {
  Model model;
  SyntheticTaskSuite suite;
  RunReport report;
};

inline double mse_value(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("mse_value: shape mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

// Noiseless per-task eval loss (mean MSE over the task's eval samples).
inline std::vector<double> evaluate_model(const Model& m, const SyntheticTaskSuite& suite) {
  std::vector<double> out;
  for (std::size_t t = 0; t < suite.spec.task_count; ++t) {
    double sum = 0.0;
    for (const TaskSample& s : suite.eval_samples[t])
      sum += mse_value(model_forward(m, s.x, ForwardMode::eval, t), s.y);
    out.push_back(sum / static_cast<double>(suite.eval_samples[t].size()));
  }
  return out;
}

inline double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Eval-time allocation matrices plus, per layer, how strongly each real
// task activates each abstract routing slot (mean task weights over the
// task's eval samples, measured at that layer's actual input).
inline std::vector<AllocationSnapshot> collect_allocation_snapshots(
    const Model& m, const SyntheticTaskSuite& suite, std::size_t step) {
  if (m.arch != Architecture::orchmoe) return {};
  const std::size_t t_real = suite.spec.task_count;
  std::vector<Tensor> stats;
  for (std::size_t slot = 0; slot < m.layers.size(); ++slot)
    stats.push_back(Tensor::zeros(t_real, m.abstract_tasks));

  for (std::size_t t = 0; t < t_real; ++t) {
    const double inv = 1.0 / static_cast<double>(suite.eval_samples[t].size());
    for (const TaskSample& s : suite.eval_samples[t]) {
      backbone_forward(s.x, m.depth, [&](const Tensor& h, std::size_t slot) {
        Tensor w = task_weights(task_logits(attention_mix(h), m.layers[slot].moe.task_router));
        for (std::size_t a = 0; a < m.abstract_tasks; ++a)
          stats[slot].at(t, a) += inv * w.at(0, a);
        return proj_forward(m.layers[slot], h, ForwardMode::eval, nullptr, t);
      });
    }
  }

  std::vector<AllocationSnapshot> out;
  for (std::size_t slot = 0; slot < m.layers.size(); ++slot) {
    AllocationSnapshot snap;
    snap.layer = slot;
    snap.step = step;
    snap.matrix = eval_allocation(m.layers[slot].moe.skill_alloc);
    snap.task_weight_stats = stats[slot];
    out.push_back(std::move(snap));
  }
  return out;
}

namespace detail {

struct SampleRef {
  std::size_t task = 0;
  std::size_t index = 0;
};

inline std::vector<SampleRef> all_train_refs(const SyntheticTaskSuite& suite) {
  std::vector<SampleRef> refs;
  for (std::size_t t = 0; t < suite.spec.task_count; ++t)
    for (std::size_t i = 0; i < suite.train_samples[t].size(); ++i) refs.push_back({t, i});
  return refs;
}

// One optimizer step over `batch` samples; returns the batch loss. Builds a
// fresh tape, so parameters must already exist (they are attached here).
inline double sgd_batch_step(const Model& model, std::vector<Tensor>& params,
                             OptimizerState& opt, const SyntheticTaskSuite& suite,
                             const std::vector<SampleRef>& refs, std::size_t begin,
                             std::size_t batch, std::uint64_t noise_seed,
                             std::uint64_t gstep) {
  GradTape tape;
  for (Tensor& p : params) {
    p.attach(tape);
    p.zero_grad();
  }
  Tensor total;
  bool first = true;
  const std::size_t count = std::min(batch, refs.size() - begin);
  for (std::size_t i = 0; i < count; ++i) {
    const SampleRef& ref = refs[begin + i];
    const TaskSample& s = suite.train_samples[ref.task][ref.index];
    Tensor out = model_forward(model, s.x, ForwardMode::train, ref.task, noise_seed, gstep);
    Tensor err = sub(out, s.y);
    Tensor l = scale(sum_all(hadamard(err, err)),
                     1.0 / static_cast<double>(s.y.size() * count));
    total = first ? l : add(total, l);
    first = false;
  }
  const double loss = total.item();
  if (!std::isfinite(loss))
    throw NumericalError("training diverged at step " + std::to_string(gstep) +
                         ": loss is not finite");
  backward(total);
  for (Tensor& p : params) p.detach();
  adamw_step(params, opt);
  return loss;
}

}  // namespace detail

inline TrainResult train_run(const RunConfig& cfg) {
  validate_config(cfg);
  TrainResult result{Model{}, generate_suite(suite_spec_of(cfg)), RunReport{}};
  result.model = model_of(cfg, result.suite);
  RunReport& report = result.report;
  report.config = cfg;

  std::vector<Tensor> params = model_trainable(result.model);
  report.trainable_params = model_param_count(result.model);
  std::vector<detail::SampleRef> refs = detail::all_train_refs(result.suite);
  const std::size_t steps_per_epoch = (refs.size() + cfg.batch_size - 1) / cfg.batch_size;
  OptimizerState opt = init_optimizer(params, steps_per_epoch * cfg.epochs, cfg.lr_max,
                                      cfg.weight_decay, cfg.warmup_ratio);
  const std::uint64_t noise_seed = hash_combine(cfg.seed, 0x6e6f6973);

  std::uint64_t gstep = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 shuffle_eng = make_engine(cfg.seed, hash_combine(0x73687566, epoch));
    std::shuffle(refs.begin(), refs.end(), shuffle_eng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < refs.size(); begin += cfg.batch_size) {
      const double loss = detail::sgd_batch_step(result.model, params, opt, result.suite,
                                                 refs, begin, cfg.batch_size, noise_seed,
                                                 gstep);
      report.loss_curve.push_back(loss);
      loss_sum += loss;
      ++batches;
      ++gstep;
    }
    EpochStats es;
    es.epoch = epoch;
    es.train_loss = loss_sum / static_cast<double>(batches);
    es.eval_per_task = evaluate_model(result.model, result.suite);
    es.eval_mean = mean_of(es.eval_per_task);
    report.epochs.push_back(std::move(es));
  }
  report.final_eval_per_task = report.epochs.back().eval_per_task;
  report.final_eval_mean = report.epochs.back().eval_mean;
  report.snapshots = collect_allocation_snapshots(result.model, result.suite, gstep);
  return result;
}

struct TransferOptions {
  std::size_t steps = 200;
  std::size_t batch_size = 4;
  double lr = 1e-2;
  double weight_decay = 0.01;
  std::uint64_t seed = 1;
};

// Few-shot adaptation to unseen tasks: the skill bank and base stay frozen;
// only router-side parameters move. Plain LoRA has no routers, so it is
// evaluated as-is — that asymmetry is the point of the comparison. With no
// shots (or no routers) this reduces to plain evaluation.
inline std::vector<double> evaluate_transfer(const Model& trained,
                                             const SyntheticTaskSuite& train_suite,
                                             const SyntheticTaskSuite& new_suite,
                                             const TransferOptions& opt = {}) {
  if (!suites_disjoint(train_suite, new_suite))
    throw ContractError("evaluate_transfer: suites share a task identity");
  Model model = clone_model(trained);
  model.real_tasks = new_suite.spec.task_count;
  for (ProjLayer& layer : model.layers)
    if (layer.arch == Architecture::task_id)
      layer.id_router = init_task_id_router(new_suite.spec.task_count, model.skill_count);

  std::vector<Tensor> params = model_router_tensors(model);
  std::vector<detail::SampleRef> refs = detail::all_train_refs(new_suite);
  if (!params.empty() && !refs.empty() && opt.steps > 0) {
    OptimizerState state = init_optimizer(params, opt.steps, opt.lr, opt.weight_decay);
    const std::uint64_t noise_seed = hash_combine(opt.seed, 0x7472616e);
    std::uint64_t gstep = 0;
    std::size_t begin = refs.size();  // force an initial shuffle
    std::size_t pass = 0;
    while (gstep < opt.steps) {
      if (begin >= refs.size()) {
        std::mt19937_64 eng = make_engine(opt.seed, hash_combine(0x73687566, pass++));
        std::shuffle(refs.begin(), refs.end(), eng);
        begin = 0;
      }
      detail::sgd_batch_step(model, params, state, new_suite, refs, begin, opt.batch_size,
                             noise_seed, gstep);
      begin += opt.batch_size;
      ++gstep;
    }
  }
  return evaluate_model(model, new_suite);
}

inline nlohmann::ordered_json epoch_to_json(const EpochStats& e) {
  nlohmann::ordered_json j;
  j["epoch"] = e.epoch;
  j["train_loss"] = e.train_loss;
  j["eval_per_task"] = e.eval_per_task;
  j["eval_mean"] = e.eval_mean;
  return j;
}

inline nlohmann::ordered_json report_to_json(const RunReport& r) {
  nlohmann::ordered_json j;
  j["config"] = config_to_json(r.config);
  j["architecture"] = r.config.architecture;
  j["trainable_params"] = r.trainable_params;
  j["loss_curve"] = r.loss_curve;
  j["epochs"] = nlohmann::ordered_json::array();
  for (const EpochStats& e : r.epochs) j["epochs"].push_back(epoch_to_json(e));
  j["final_eval_per_task"] = r.final_eval_per_task;
  j["final_eval_mean"] = r.final_eval_mean;
  j["snapshots"] = nlohmann::ordered_json::array();
  for (const AllocationSnapshot& s : r.snapshots) {
    nlohmann::ordered_json sj = snapshot_to_json(s);
    sj["task_weight_stats"] = s.task_weight_stats.data();
    sj["real_tasks"] = s.task_weight_stats.rows();
    j["snapshots"].push_back(std::move(sj));
  }
  return j;
}

}  // namespace orchmoe

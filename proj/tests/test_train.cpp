#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstddef>
#include <vector>

#include "helpers.hpp"
#include "orchmoe/train.hpp"

using namespace orchmoe;

namespace {

RunConfig tiny_config() {
  RunConfig c;
  c.architecture = "orchmoe";
  c.d = 16;
  c.n_tokens = 4;
  c.T = 4;
  c.S = 2;
  c.r = 4;
  c.k = 1;
  c.T_real = 4;
  c.G = 1;
  c.n_train = 8;
  c.n_eval = 4;
  c.epochs = 8;
  c.batch_size = 4;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("mse_value computes mean squared error and checks shapes") {
  Tensor a = Tensor::from(1, 2, {1.0, 2.0});
  Tensor b = Tensor::from(1, 2, {2.0, 4.0});
  REQUIRE(mse_value(a, b) == Catch::Approx(2.5).epsilon(1e-15));
  REQUIRE_THROWS_AS(mse_value(a, Tensor::zeros(2, 2)), ShapeError);
}

TEST_CASE("report bookkeeping matches the schedule") {
  RunConfig c = tiny_config();
  TrainResult r = train_run(c);
  const std::size_t steps_per_epoch = (c.T_real * c.n_train + c.batch_size - 1) / c.batch_size;
  REQUIRE(r.report.loss_curve.size() == steps_per_epoch * c.epochs);
  REQUIRE(r.report.epochs.size() == c.epochs);
  for (std::size_t i = 0; i < c.epochs; ++i) REQUIRE(r.report.epochs[i].epoch == i);
  REQUIRE(r.report.final_eval_per_task.size() == c.T_real);
  REQUIRE(r.report.final_eval_mean == mean_of(r.report.final_eval_per_task));
  REQUIRE(r.report.final_eval_per_task == r.report.epochs.back().eval_per_task);
  REQUIRE(r.report.trainable_params == model_param_count(r.model));
}

TEST_CASE("training reports are byte identical across reruns") {
  RunConfig c = tiny_config();
  std::string a = report_to_json(train_run(c).report).dump(2);
  std::string b = report_to_json(train_run(c).report).dump(2);
  REQUIRE(a == b);
  c.seed = 4;
  std::string other = report_to_json(train_run(c).report).dump(2);
  REQUIRE(a != other);
}

TEST_CASE("base projections stay bitwise frozen through training") {
  for (const char* arch : {"orchmoe", "shared"}) {
    RunConfig c = tiny_config();
    c.architecture = arch;
    TrainResult r = train_run(c);
    for (std::size_t slot = 0; slot < r.model.layers.size(); ++slot) {
      const Tensor& w0 = r.model.arch == Architecture::orchmoe ? r.model.layers[slot].moe.w0
                                                               : r.model.layers[slot].w0;
      INFO(arch << " slot " << slot);
      REQUIRE(w0.data() == r.suite.base_weights[slot].data());
    }
  }
}

TEST_CASE("allocation snapshots cover the composed model only") {
  RunConfig c = tiny_config();
  c.epochs = 2;
  TrainResult r = train_run(c);
  REQUIRE(r.report.snapshots.size() == 3);  // one per projection slot
  for (std::size_t slot = 0; slot < 3; ++slot) {
    const AllocationSnapshot& s = r.report.snapshots[slot];
    REQUIRE(s.layer == slot);
    REQUIRE(s.step == r.report.loss_curve.size());
    REQUIRE(s.matrix.rows() == c.T);
    REQUIRE(s.matrix.cols() == c.S);
    REQUIRE(s.task_weight_stats.rows() == c.T_real);
    REQUIRE(s.task_weight_stats.cols() == c.T);
    for (double v : s.matrix.data()) {
      REQUIRE(v > 0.0);
      REQUIRE(v < 1.0);
    }
    // mean task weights are rows of softmax outputs
    for (std::size_t t = 0; t < c.T_real; ++t) {
      double row = 0.0;
      for (std::size_t a = 0; a < c.T; ++a) row += s.task_weight_stats.at(t, a);
      REQUIRE(row == Catch::Approx(1.0).epsilon(1e-12));
    }
  }

  c.architecture = "lora";
  REQUIRE(train_run(c).report.snapshots.empty());
}

TEST_CASE("noiseless single-group suite is fit to high precision") {
  RunConfig c = tiny_config();
  c.noise_std = 0.0;
  c.task_perturb_scale = 0.0;  // one planted delta, rank 2 <= adapter rank
  c.T = 1;                     // single skill: gate saturation is not the bottleneck
  c.S = 1;
  c.lr_max = 5e-2;
  c.weight_decay = 0.0;
  c.epochs = 400;
  TrainResult r = train_run(c);
  REQUIRE(r.report.final_eval_mean < 1e-4);
}

TEST_CASE("single-task training collapses the loss within 500 steps") {
  RunConfig c = tiny_config();
  c.T = 1;
  c.S = 1;
  c.T_real = 1;
  c.G = 1;
  c.noise_std = 0.0;
  c.task_perturb_scale = 0.0;
  c.n_train = 16;
  c.batch_size = 4;
  c.epochs = 125;  // 4 steps per epoch -> 500 optimizer steps
  TrainResult r = train_run(c);
  REQUIRE(r.report.loss_curve.size() == 500);
  REQUIRE(r.report.epochs.back().train_loss < 0.1 * r.report.loss_curve.front());
}

TEST_CASE("saturated single-skill routing reduces to a plain adapter") {
  SuiteSpec spec;
  spec.task_count = 2;
  spec.group_count = 1;
  spec.n_train = 4;
  spec.n_eval = 2;
  spec.dim = 8;
  spec.n_tokens = 4;
  spec.seed = 21;
  SyntheticTaskSuite suite = generate_suite(spec);

  Model moe = init_model(Architecture::orchmoe, suite.base_weights, 1, 1, 1, 2, 1, 2, 5);
  Model plain = init_model(Architecture::lora, suite.base_weights, 1, 1, 1, 2, 1, 2, 6);

  std::vector<Tensor> moe_params, plain_params;
  for (std::size_t slot = 0; slot < 3; ++slot) {
    // drive the 1x1 allocation far into saturation: every sampled gate is 1
    // up to ~1e-19, so the composed layer is the adapter itself
    moe.layers[slot].moe.skill_alloc.logits.data()[0] = 60.0;
    plain.layers[slot].skills[0].down =
        detail::clone_tensor(moe.layers[slot].moe.skills[0].down);
    plain.layers[slot].skills[0].up = detail::clone_tensor(moe.layers[slot].moe.skills[0].up);
    plain.layers[slot].skills[0].rank = 2;
    moe_params.push_back(moe.layers[slot].moe.skills[0].down);
    moe_params.push_back(moe.layers[slot].moe.skills[0].up);
    plain_params.push_back(plain.layers[slot].skills[0].down);
    plain_params.push_back(plain.layers[slot].skills[0].up);
  }

  std::vector<detail::SampleRef> refs = detail::all_train_refs(suite);
  OptimizerState moe_opt = init_optimizer(moe_params, 60, 1e-2, 0.01);
  OptimizerState plain_opt = init_optimizer(plain_params, 60, 1e-2, 0.01);
  std::size_t begin = 0;
  for (std::size_t step = 0; step < 60; ++step) {
    const double lm = detail::sgd_batch_step(moe, moe_params, moe_opt, suite, refs, begin, 4,
                                             /*noise_seed=*/17, step);
    const double lp = detail::sgd_batch_step(plain, plain_params, plain_opt, suite, refs,
                                             begin, 4, /*noise_seed=*/17, step);
    REQUIRE(std::fabs(lm - lp) <= 1e-10);
    begin = (begin + 4) % refs.size();
  }
  for (std::size_t i = 0; i < moe_params.size(); ++i)
    REQUIRE(testutil::max_abs_diff(moe_params[i], plain_params[i]) <= 1e-10);

  std::vector<double> em = evaluate_model(moe, suite);
  std::vector<double> ep = evaluate_model(plain, suite);
  for (std::size_t t = 0; t < em.size(); ++t) REQUIRE(std::fabs(em[t] - ep[t]) <= 1e-10);
}

TEST_CASE("one optimizer step matches a finite-difference prediction") {
  SuiteSpec spec;
  spec.task_count = 1;
  spec.group_count = 1;
  spec.n_train = 2;
  spec.n_eval = 1;
  spec.dim = 6;
  spec.n_tokens = 2;
  spec.seed = 33;
  SyntheticTaskSuite suite = generate_suite(spec);
  Model m = init_model(Architecture::orchmoe, suite.base_weights, 1, 1, 1, 1, 1, 1, 9);
  // give the adapters mass so gradients flow through every router path
  for (auto& [name, t] : model_named_params(m))
    if (name.ends_with(".up") || name == "layer0.alloc" || name.ends_with("router.bias"))
      for (std::size_t i = 0; i < t.size(); ++i)
        t.data()[i] = 0.2 * std::cos(static_cast<double>(i + 1));

  const std::uint64_t noise_seed = 55;
  std::vector<detail::SampleRef> refs = detail::all_train_refs(suite);
  auto batch_loss = [&](const Model& model) {
    double total = 0.0;
    for (const detail::SampleRef& ref : refs) {
      const TaskSample& s = suite.train_samples[ref.task][ref.index];
      Tensor out = model_forward(model, s.x, ForwardMode::train, ref.task, noise_seed, 0);
      double sq = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double d = out.data()[i] - s.y.data()[i];
        sq += d * d;
      }
      total += sq / static_cast<double>(s.y.size() * refs.size());
    }
    return total;
  };

  // central finite differences of the exact batch loss, parameter by parameter
  std::vector<Tensor> params = model_trainable(m);
  const double h = 1e-5;
  std::vector<std::vector<double>> fd_grad(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    fd_grad[i].resize(params[i].size());
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      double& w = params[i].data()[j];
      const double keep = w;
      w = keep + h;
      const double up = batch_loss(m);
      w = keep - h;
      const double down = batch_loss(m);
      w = keep;
      fd_grad[i][j] = (up - down) / (2.0 * h);
    }
  }

  std::vector<std::vector<double>> before(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) before[i] = params[i].data();

  const double lr_max = 1e-2, wd = 0.01;
  OptimizerState opt = init_optimizer(params, 10, lr_max, wd, 0.0);
  const double lr = lr_at(1, opt);
  detail::sgd_batch_step(m, params, opt, suite, refs, 0, refs.size(), noise_seed, 0);

  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      const double g = fd_grad[i][j];
      // first AdamW step: unit-normalized move, then decoupled decay
      const double adam = before[i][j] - lr * g / (std::fabs(g) + opt.eps);
      const double predicted = adam - lr * wd * adam;
      const double actual = params[i].data()[j];
      const double denom = std::max(1e-8, std::fabs(predicted - before[i][j]));
      INFO("param " << i << " entry " << j);
      REQUIRE(std::fabs(actual - predicted) / denom < 1e-3);
    }
}

TEST_CASE("training throws a numerical error when the loss explodes") {
  RunConfig c = tiny_config();
  c.lr_max = 1e8;
  c.warmup_ratio = 0.0;
  c.epochs = 5;
  REQUIRE_THROWS_MATCHES(
      train_run(c), NumericalError,
      Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("diverged")));
}

TEST_CASE("transfer evaluation rejects overlapping suites") {
  RunConfig c = tiny_config();
  c.epochs = 1;
  TrainResult r = train_run(c);
  REQUIRE_THROWS_AS(evaluate_transfer(r.model, r.suite, r.suite), ContractError);
}

TEST_CASE("zero-shot transfer is plain evaluation of the trained model") {
  RunConfig c = tiny_config();
  c.epochs = 2;
  for (const char* arch : {"orchmoe", "lora"}) {
    c.architecture = arch;
    TrainResult r = train_run(c);
    SyntheticTaskSuite fresh = make_transfer_suite(r.suite, 2, 0, 4, 71);
    std::vector<double> via_transfer = evaluate_transfer(r.model, r.suite, fresh);
    std::vector<double> direct = evaluate_model(r.model, fresh);
    INFO(arch);
    REQUIRE(via_transfer == direct);
  }
}

TEST_CASE("router adaptation on a cloned task tracks the in-training loss") {
  RunConfig c = tiny_config();
  c.T_real = 3;
  c.T = 3;
  c.n_train = 16;
  c.n_eval = 16;
  c.epochs = 40;
  c.seed = 11;
  TrainResult r = train_run(c);
  // one unseen task whose teacher is exactly training task 1
  SyntheticTaskSuite fresh = make_transfer_suite(r.suite, 1, 16, 16, 909, {1});
  std::vector<double> t = evaluate_transfer(r.model, r.suite, fresh);
  REQUIRE(t.size() == 1);
  REQUIRE(t[0] <= 1.10 * r.report.final_eval_per_task[1]);
}

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "orchmoe/errors.hpp"
#include "orchmoe/rng.hpp"
#include "orchmoe/tensor.hpp"

namespace orchmoe {

// Three square projections (q, k, v) per attention block.
inline constexpr std::size_t kSlotsPerBlock = 3;

// Shared backbone skeleton: scaled dot-product self-attention with a
// residual, repeated `depth` times. `proj(h, slot)` supplies the projection
// for slot 3*block + {0: q, 1: k, 2: v}. Teachers and trainable models run
// the identical skeleton, so targets stay inside the model class.
template <typename ProjFn>
Tensor backbone_forward(const Tensor& x, std::size_t depth, ProjFn&& proj) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  Tensor h = x;
  for (std::size_t b = 0; b < depth; ++b) {
    Tensor q = proj(h, kSlotsPerBlock * b + 0);
    Tensor k = proj(h, kSlotsPerBlock * b + 1);
    Tensor v = proj(h, kSlotsPerBlock * b + 2);
    Tensor attn = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_d));
    h = add(matmul(attn, v), h);
  }
  return h;
}

struct TaskSample {
  Tensor x;  // n_tokens x d, entries in [-1, 1]
  Tensor y;  // n_tokens x d teacher output (train: plus observation noise)
  std::size_t task_id = 0;
};

struct SuiteSpec {
  std::size_t task_count = 10;
  std::size_t group_count = 3;
  std::size_t n_train = 16;
  std::size_t n_eval = 8;
  std::size_t dim = 32;
  std::size_t n_tokens = 8;
  std::size_t depth = 1;
  double noise_std = 0.02;
  double group_scale = 0.8;          // strength of the shared per-group structure
  double task_perturb_scale = 0.45;  // strength of the per-task residual structure
  std::size_t planted_rank = 2;     // rank of each planted group delta
  std::uint64_t seed = 0;
};

// Multi-task regression data with planted low-rank structure. Each task's
// teacher is the backbone run with dense weights
//   W(task, slot) = base(slot) + group_delta(group(task), slot) + task perturbation,
// so tasks in a group share structure exactly. Inputs carry a per-group
// additive signature, which is the only way tasks are distinguishable from
// data; ground-truth IDs ride along for baselines and evaluation only.
struct SyntheticTaskSuite {
  SuiteSpec spec;
  std::vector<std::size_t> group_of;                 // task -> group (round-robin)
  std::vector<std::uint64_t> task_uid;               // identity, for overlap checks
  std::vector<Tensor> base_weights;                  // [slot] d x d, shared, frozen
  std::vector<std::vector<Tensor>> group_deltas;     // [group][slot] d x d
  std::vector<Tensor> group_signatures;              // [group] 1 x d, entries +-0.25
  std::vector<std::vector<Tensor>> teacher_weights;  // [task][slot] d x d dense
  std::vector<std::vector<TaskSample>> train_samples;  // [task]
  std::vector<std::vector<TaskSample>> eval_samples;   // [task]
};

namespace detail {

inline Tensor gaussian_tensor(std::size_t rows, std::size_t cols, double stddev,
                              std::mt19937_64& eng) {
  Tensor t = Tensor::zeros(rows, cols);
  std::normal_distribution<double> gauss(0.0, stddev);
  for (double& v : t.data()) v = gauss(eng);
  return t;
}

// Low-rank planted structure: scale/sqrt(r*d) * A B with standard-normal
// factors, so the per-entry variance is scale^2/d regardless of rank.
inline Tensor planted_delta(std::size_t d, std::size_t rank, double strength,
                            std::mt19937_64& eng) {
  Tensor a = gaussian_tensor(d, rank, 1.0, eng);
  Tensor b = gaussian_tensor(rank, d, 1.0, eng);
  return scale(matmul(a, b), strength / std::sqrt(static_cast<double>(rank * d)));
}

inline Tensor teacher_forward(const std::vector<Tensor>& weights, std::size_t depth,
                              const Tensor& x) {
  return backbone_forward(x, depth,
                          [&](const Tensor& h, std::size_t slot) {
                            return matmul(h, transpose(weights[slot]));
                          });
}

}  // namespace detail

inline void validate_spec(const SuiteSpec& s) {
  if (s.task_count < 1) throw ContractError("generate_suite: task_count must be at least 1");
  if (s.group_count < 1 || s.group_count > s.task_count)
    throw ContractError("generate_suite: need 1 <= group_count <= task_count, got G = " +
                        std::to_string(s.group_count) + ", T = " + std::to_string(s.task_count));
  if (s.dim < 2 || s.n_tokens < 1 || s.depth < 1)
    throw ContractError("generate_suite: dim, n_tokens and depth must be positive (dim >= 2)");
  if (s.n_eval < 1) throw ContractError("generate_suite: n_eval must be at least 1");
  if (s.planted_rank < 1 || s.planted_rank >= s.dim)
    throw ContractError("generate_suite: planted_rank must satisfy 1 <= rank < dim");
  if (s.noise_std < 0.0 || s.group_scale < 0.0 || s.task_perturb_scale < 0.0)
    throw ContractError("generate_suite: scales must be nonnegative");
}

namespace detail {

inline TaskSample draw_sample(const SyntheticTaskSuite& suite, std::size_t task,
                              bool with_noise, std::mt19937_64& eng) {
  const SuiteSpec& s = suite.spec;
  const Tensor& sig = suite.group_signatures[suite.group_of[task]];
  TaskSample sample;
  sample.task_id = task;
  sample.x = Tensor::zeros(s.n_tokens, s.dim);
  std::uniform_real_distribution<double> content(-0.7, 0.7);
  for (std::size_t i = 0; i < s.n_tokens; ++i)
    for (std::size_t c = 0; c < s.dim; ++c) sample.x.at(i, c) = content(eng) + sig.at(0, c);
  sample.y = teacher_forward(suite.teacher_weights[task], s.depth, sample.x);
  if (with_noise && s.noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, s.noise_std);
    for (double& v : sample.y.data()) v += noise(eng);
  }
  return sample;
}

}  // namespace detail

inline SyntheticTaskSuite generate_suite(const SuiteSpec& spec) {
  validate_spec(spec);
  SyntheticTaskSuite suite;
  suite.spec = spec;
  const std::size_t slots = kSlotsPerBlock * spec.depth;

  std::mt19937_64 base_eng = make_engine(spec.seed, 0x62617365);  // shared backbone
  const double base_std = 1.0 / std::sqrt(static_cast<double>(spec.dim));
  for (std::size_t slot = 0; slot < slots; ++slot)
    suite.base_weights.push_back(
        detail::gaussian_tensor(spec.dim, spec.dim, base_std, base_eng));

  for (std::size_t g = 0; g < spec.group_count; ++g) {
    std::mt19937_64 eng = make_engine(spec.seed, hash_combine(0x67726f75, g));
    std::vector<Tensor> deltas;
    for (std::size_t slot = 0; slot < slots; ++slot)
      deltas.push_back(
          detail::planted_delta(spec.dim, spec.planted_rank, spec.group_scale, eng));
    suite.group_deltas.push_back(std::move(deltas));

    Tensor sig = Tensor::zeros(1, spec.dim);
    std::mt19937_64 sig_eng = make_engine(spec.seed, hash_combine(0x7369676e, g));
    for (double& v : sig.data()) v = (sig_eng() & 1u) ? 0.25 : -0.25;
    suite.group_signatures.push_back(std::move(sig));
  }

  for (std::size_t t = 0; t < spec.task_count; ++t) {
    suite.group_of.push_back(t % spec.group_count);
    suite.task_uid.push_back(hash_combine(spec.seed, hash_combine(0x75696474, t)));
    std::mt19937_64 eng = make_engine(spec.seed, hash_combine(0x7461736b, t));
    std::vector<Tensor> weights;
    for (std::size_t slot = 0; slot < slots; ++slot) {
      Tensor w = add(suite.base_weights[slot], suite.group_deltas[t % spec.group_count][slot]);
      if (spec.task_perturb_scale > 0.0)
        w = add(w, detail::planted_delta(spec.dim, 1, spec.task_perturb_scale, eng));
      weights.push_back(std::move(w));
    }
    suite.teacher_weights.push_back(std::move(weights));
  }

  for (std::size_t t = 0; t < spec.task_count; ++t) {
    std::mt19937_64 train_eng = make_engine(spec.seed, hash_combine(0x64747261, t));
    std::mt19937_64 eval_eng = make_engine(spec.seed, hash_combine(0x64657661, t));
    std::vector<TaskSample> train, eval_set;
    for (std::size_t i = 0; i < spec.n_train; ++i)
      train.push_back(detail::draw_sample(suite, t, true, train_eng));
    for (std::size_t i = 0; i < spec.n_eval; ++i)
      eval_set.push_back(detail::draw_sample(suite, t, false, eval_eng));
    suite.train_samples.push_back(std::move(train));
    suite.eval_samples.push_back(std::move(eval_set));
  }
  return suite;
}

inline SyntheticTaskSuite generate_suite(std::size_t task_count, std::size_t group_count,
                                         std::size_t n_train, std::size_t n_eval,
                                         std::size_t dim, double noise_std,
                                         std::uint64_t seed) {
  SuiteSpec s;
  s.task_count = task_count;
  s.group_count = group_count;
  s.n_train = n_train;
  s.n_eval = n_eval;
  s.dim = dim;
  s.noise_std = noise_std;
  s.seed = seed;
  return generate_suite(s);
}

// Unseen tasks planted in the same groups: the backbone, group deltas and
// input signatures carry over; each new task gets a fresh perturbation,
// fresh samples and a fresh identity. `copy_teacher_of[i] >= 0` instead
// clones that training task's teacher exactly (identity still fresh).
inline SyntheticTaskSuite make_transfer_suite(const SyntheticTaskSuite& base,
                                              std::size_t task_count, std::size_t n_shot,
                                              std::size_t n_eval, std::uint64_t seed,
                                              const std::vector<std::ptrdiff_t>&
                                                  copy_teacher_of = {}) {
  if (!copy_teacher_of.empty() && copy_teacher_of.size() != task_count)
    throw ContractError("make_transfer_suite: copy_teacher_of must have one entry per task");
  SyntheticTaskSuite suite;
  suite.spec = base.spec;
  suite.spec.task_count = task_count;
  suite.spec.n_train = n_shot;
  suite.spec.n_eval = n_eval;
  suite.spec.seed = seed;
  validate_spec(suite.spec);
  suite.base_weights = base.base_weights;
  suite.group_deltas = base.group_deltas;
  suite.group_signatures = base.group_signatures;
  const std::size_t slots = kSlotsPerBlock * suite.spec.depth;

  for (std::size_t t = 0; t < task_count; ++t) {
    const std::ptrdiff_t src = copy_teacher_of.empty() ? -1 : copy_teacher_of[t];
    suite.task_uid.push_back(hash_combine(seed, hash_combine(0x6e657774, t)));
    if (src >= 0) {
      if (static_cast<std::size_t>(src) >= base.spec.task_count)
        throw ContractError("make_transfer_suite: copy_teacher_of index out of range");
      suite.group_of.push_back(base.group_of[src]);
      suite.teacher_weights.push_back(base.teacher_weights[src]);
    } else {
      const std::size_t g = t % suite.spec.group_count;
      suite.group_of.push_back(g);
      std::mt19937_64 eng = make_engine(seed, hash_combine(0x7461736b, t));
      std::vector<Tensor> weights;
      for (std::size_t slot = 0; slot < slots; ++slot) {
        Tensor w = add(suite.base_weights[slot], suite.group_deltas[g][slot]);
        if (suite.spec.task_perturb_scale > 0.0)
          w = add(w, detail::planted_delta(suite.spec.dim, 1, suite.spec.task_perturb_scale,
                                           eng));
        weights.push_back(std::move(w));
      }
      suite.teacher_weights.push_back(std::move(weights));
    }
  }

  for (std::size_t t = 0; t < task_count; ++t) {
    std::mt19937_64 train_eng = make_engine(seed, hash_combine(0x64747261, t));
    std::mt19937_64 eval_eng = make_engine(seed, hash_combine(0x64657661, t));
    std::vector<TaskSample> train, eval_set;
    for (std::size_t i = 0; i < n_shot; ++i)
      train.push_back(detail::draw_sample(suite, t, true, train_eng));
    for (std::size_t i = 0; i < n_eval; ++i)
      eval_set.push_back(detail::draw_sample(suite, t, false, eval_eng));
    suite.train_samples.push_back(std::move(train));
    suite.eval_samples.push_back(std::move(eval_set));
  }
  return suite;
}

inline bool suites_disjoint(const SyntheticTaskSuite& a, const SyntheticTaskSuite& b) {
  for (std::uint64_t ua : a.task_uid)
    for (std::uint64_t ub : b.task_uid)
      if (ua == ub) return false;
  return true;
}

// Order-stable content hash over every tensor in the suite; equal suites
// fold to equal checksums.
inline std::uint64_t suite_checksum(const SyntheticTaskSuite& suite) {
  std::uint64_t h = hash_combine(suite.spec.seed, suite.spec.task_count);
  auto fold = [&h](const Tensor& t) {
    for (double v : t.data()) h = hash_combine(h, std::bit_cast<std::uint64_t>(v));
  };
  for (const Tensor& t : suite.base_weights) fold(t);
  for (const auto& group : suite.group_deltas)
    for (const Tensor& t : group) fold(t);
  for (const Tensor& t : suite.group_signatures) fold(t);
  for (const auto& task : suite.teacher_weights)
    for (const Tensor& t : task) fold(t);
  for (const auto& samples : {suite.train_samples, suite.eval_samples})
    for (const auto& task : samples)
      for (const TaskSample& s : task) {
        fold(s.x);
        fold(s.y);
        h = hash_combine(h, s.task_id);
      }
  return h;
}

}  // namespace orchmoe

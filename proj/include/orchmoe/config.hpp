#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "orchmoe/errors.hpp"
#include "orchmoe/model.hpp"
#include "orchmoe/synthetic.hpp"

namespace orchmoe {

// One experiment end to end: architecture, backbone dims, routing widths,
// suite shape and optimizer recipe. `architecture` and `seed` are required
// in config files; everything else may fall back to these defaults.
struct RunConfig {
  std::string architecture = "orchmoe";
  // backbone
  std::size_t d = 32;
  std::size_t depth = 1;
  std::size_t n_tokens = 8;
  // routing
  std::size_t T = 10;  // abstract tasks seen by the composed router
  std::size_t S = 4;   // skills
  std::size_t r = 4;   // adapter rank
  std::size_t k = 2;   // survivors for the top-k baseline
  // suite
  std::size_t T_real = 10;
  std::size_t G = 3;
  std::size_t n_train = 16;
  std::size_t n_eval = 8;
  double noise_std = 0.02;
  double group_scale = 0.8;
  double task_perturb_scale = 0.45;
  // optimizer
  double lr_max = 1e-2;  // suited to the synthetic suite; 5e-5 is the
                         // documented recipe value for full-scale models
  double weight_decay = 0.01;
  double warmup_ratio = 0.06;
  std::size_t epochs = 10;
  std::size_t batch_size = 4;
  // run identity
  std::uint64_t seed = 0;
  std::string out_dir = "out";
};

namespace detail {

inline std::size_t take_size(const nlohmann::json& j, const std::string& key,
                             std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  const nlohmann::json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw ContractError("config field '" + key + "' must be a nonnegative integer");
  return v.get<std::size_t>();
}

inline double take_double(const nlohmann::json& j, const std::string& key, double fallback) {
  if (!j.contains(key)) return fallback;
  const nlohmann::json& v = j.at(key);
  if (!v.is_number()) throw ContractError("config field '" + key + "' must be a number");
  return v.get<double>();
}

inline std::string take_string(const nlohmann::json& j, const std::string& key,
                               const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  const nlohmann::json& v = j.at(key);
  if (!v.is_string()) throw ContractError("config field '" + key + "' must be a string");
  return v.get<std::string>();
}

}  // namespace detail

inline const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys{
      "architecture", "d",       "depth",        "n_tokens",    "T",
      "S",            "r",       "k",            "T_real",      "G",
      "n_train",      "n_eval",  "noise_std",    "group_scale", "task_perturb_scale",
      "lr_max",       "weight_decay", "warmup_ratio", "epochs",  "batch_size",
      "seed",         "out_dir"};
  return keys;
}

inline void validate_config(const RunConfig& c) {
  parse_architecture(c.architecture);  // throws on unknown names
  if (c.d < 2) throw ContractError("config: d must be at least 2");
  if (c.depth < 1 || c.n_tokens < 1)
    throw ContractError("config: depth and n_tokens must be at least 1");
  if (c.T < 1 || c.S < 1) throw ContractError("config: T and S must be at least 1");
  if (c.r < 1 || c.r >= c.d) throw ContractError("config: need 1 <= r < d");
  if (c.k < 1 || c.k > c.S) throw ContractError("config: need 1 <= k <= S");
  if (c.T_real < 1) throw ContractError("config: T_real must be at least 1");
  if (c.G < 1 || c.G > c.T_real) throw ContractError("config: need 1 <= G <= T_real");
  if (c.n_train < 1 || c.n_eval < 1)
    throw ContractError("config: n_train and n_eval must be at least 1");
  if (c.noise_std < 0.0 || c.group_scale < 0.0 || c.task_perturb_scale < 0.0)
    throw ContractError("config: suite scales must be nonnegative");
  if (!(c.lr_max > 0.0)) throw ContractError("config: lr_max must be positive");
  if (c.weight_decay < 0.0) throw ContractError("config: weight_decay must be nonnegative");
  if (!(c.warmup_ratio >= 0.0 && c.warmup_ratio < 1.0))
    throw ContractError("config: warmup_ratio must lie in [0, 1)");
  if (c.epochs < 1 || c.batch_size < 1)
    throw ContractError("config: epochs and batch_size must be at least 1");
  if (c.out_dir.empty()) throw ContractError("config: out_dir must not be empty");
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ContractError("config: top level must be a JSON object");
  for (const auto& item : j.items())
    if (!known_config_keys().count(item.key()))
      throw ContractError("config: unknown field '" + item.key() + "'");
  for (const char* required : {"architecture", "seed"})
    if (!j.contains(required))
      throw ContractError(std::string("config: missing required field '") + required + "'");

  RunConfig c;
  c.architecture = detail::take_string(j, "architecture", c.architecture);
  c.d = detail::take_size(j, "d", c.d);
  c.depth = detail::take_size(j, "depth", c.depth);
  c.n_tokens = detail::take_size(j, "n_tokens", c.n_tokens);
  c.T = detail::take_size(j, "T", c.T);
  c.S = detail::take_size(j, "S", c.S);
  c.r = detail::take_size(j, "r", c.r);
  c.k = detail::take_size(j, "k", c.k);
  c.T_real = detail::take_size(j, "T_real", c.T_real);
  c.G = detail::take_size(j, "G", c.G);
  c.n_train = detail::take_size(j, "n_train", c.n_train);
  c.n_eval = detail::take_size(j, "n_eval", c.n_eval);
  c.noise_std = detail::take_double(j, "noise_std", c.noise_std);
  c.group_scale = detail::take_double(j, "group_scale", c.group_scale);
  c.task_perturb_scale = detail::take_double(j, "task_perturb_scale", c.task_perturb_scale);
  c.lr_max = detail::take_double(j, "lr_max", c.lr_max);
  c.weight_decay = detail::take_double(j, "weight_decay", c.weight_decay);
  c.warmup_ratio = detail::take_double(j, "warmup_ratio", c.warmup_ratio);
  c.epochs = detail::take_size(j, "epochs", c.epochs);
  c.batch_size = detail::take_size(j, "batch_size", c.batch_size);
  if (j.contains("seed")) {
    const nlohmann::json& v = j.at("seed");
    if (!v.is_number_integer() || v.get<long long>() < 0)
      throw ContractError("config field 'seed' must be a nonnegative integer");
    c.seed = v.get<std::uint64_t>();
  }
  c.out_dir = detail::take_string(j, "out_dir", c.out_dir);
  validate_config(c);
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ContractError("config " + path + ": " + e.what());
  }
  return parse_run_config(j);
}

// Exact echo for reports and checkpoints; parsing it back yields the same
// config, which makes byte-exact replay possible.
inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["architecture"] = c.architecture;
  j["d"] = c.d;
  j["depth"] = c.depth;
  j["n_tokens"] = c.n_tokens;
  j["T"] = c.T;
  j["S"] = c.S;
  j["r"] = c.r;
  j["k"] = c.k;
  j["T_real"] = c.T_real;
  j["G"] = c.G;
  j["n_train"] = c.n_train;
  j["n_eval"] = c.n_eval;
  j["noise_std"] = c.noise_std;
  j["group_scale"] = c.group_scale;
  j["task_perturb_scale"] = c.task_perturb_scale;
  j["lr_max"] = c.lr_max;
  j["weight_decay"] = c.weight_decay;
  j["warmup_ratio"] = c.warmup_ratio;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  return j;
}

inline SuiteSpec suite_spec_of(const RunConfig& c) {
  SuiteSpec s;
  s.task_count = c.T_real;
  s.group_count = c.G;
  s.n_train = c.n_train;
  s.n_eval = c.n_eval;
  s.dim = c.d;
  s.n_tokens = c.n_tokens;
  s.depth = c.depth;
  s.noise_std = c.noise_std;
  s.group_scale = c.group_scale;
  s.task_perturb_scale = c.task_perturb_scale;
  s.seed = c.seed;
  return s;
}

inline Model model_of(const RunConfig& c, const SyntheticTaskSuite& suite) {
  return init_model(parse_architecture(c.architecture), suite.base_weights, c.depth, c.T, c.S,
                    c.r, c.k, c.T_real, hash_combine(c.seed, 0x6d6f6465));
}

}  // namespace orchmoe

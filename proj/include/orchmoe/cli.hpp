#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "orchmoe/analysis.hpp"
#include "orchmoe/checkpoint.hpp"
#include "orchmoe/config.hpp"
#include "orchmoe/errors.hpp"
#include "orchmoe/gradcheck_suite.hpp"
#include "orchmoe/train.hpp"

namespace orchmoe {

namespace detail {

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << content;
  if (!out.good()) throw IoError("write failed: " + path);
}

// Map thrown domain errors onto the documented exit codes.
template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

}  // namespace detail

inline int cmd_train(const std::string& config_path, const std::string& out_override,
                     bool has_seed, std::uint64_t seed_override, const std::string& format,
                     std::ostream& log = std::cout) {
  RunConfig cfg = load_run_config(config_path);
  if (has_seed) cfg.seed = seed_override;
  if (!out_override.empty()) cfg.out_dir = out_override;
  TrainResult result = train_run(cfg);

  detail::ensure_dir(cfg.out_dir);
  const std::string base = cfg.out_dir + "/";
  detail::write_text(base + "report.json", report_to_json(result.report).dump(2) + "\n");
  save_checkpoint(base + "checkpoint.bin", result.model, cfg,
                  result.report.loss_curve.size());
  for (const AllocationSnapshot& snap : result.report.snapshots)
    export_snapshot(snap, base + "alloc_layer" + std::to_string(snap.layer) + "." + format,
                    format);
  log << "train ok: architecture=" << cfg.architecture
      << " trainable_params=" << result.report.trainable_params
      << " final_eval_mean=" << result.report.final_eval_mean << "\n";
  log << "wrote " << base << "report.json\n";
  return kExitOk;
}

inline int cmd_gradcheck(std::ostream& log = std::cout) {
  bool all_pass = true;
  for (const GradCheckCase& c : standard_gradcheck_cases()) {
    GradCheckResult r = run_grad_check(c);
    char line[160];
    std::snprintf(line, sizeof(line), "%-28s max_rel_err=%.3e  %s", r.name.c_str(),
                  r.max_rel_err, r.pass ? "PASS" : "FAIL");
    log << line << "\n";
    all_pass = all_pass && r.pass;
  }
  log << (all_pass ? "gradcheck: all checks passed\n" : "gradcheck: FAILURES above\n");
  return all_pass ? kExitOk : kExitNumerical;
}

namespace detail {

inline void require_same_suite(const RunConfig& a, const RunConfig& b,
                               const std::string& path_b) {
  auto mismatch = [&](const std::string& field) {
    throw ContractError("compare: config " + path_b + " disagrees on suite field '" + field +
                        "'");
  };
  if (a.seed != b.seed) mismatch("seed");
  if (a.d != b.d) mismatch("d");
  if (a.depth != b.depth) mismatch("depth");
  if (a.n_tokens != b.n_tokens) mismatch("n_tokens");
  if (a.T_real != b.T_real) mismatch("T_real");
  if (a.G != b.G) mismatch("G");
  if (a.n_train != b.n_train) mismatch("n_train");
  if (a.n_eval != b.n_eval) mismatch("n_eval");
  if (a.noise_std != b.noise_std) mismatch("noise_std");
  if (a.group_scale != b.group_scale) mismatch("group_scale");
  if (a.task_perturb_scale != b.task_perturb_scale) mismatch("task_perturb_scale");
}

inline std::size_t param_count_of(const RunConfig& cfg) {
  std::vector<Tensor> zero_bases;
  for (std::size_t slot = 0; slot < kSlotsPerBlock * cfg.depth; ++slot)
    zero_bases.push_back(Tensor::zeros(cfg.d, cfg.d));
  Model m = init_model(parse_architecture(cfg.architecture), zero_bases, cfg.depth, cfg.T,
                       cfg.S, cfg.r, cfg.k, cfg.T_real, 0);
  return model_param_count(m);
}

}  // namespace detail

inline int cmd_compare(const std::vector<std::string>& config_paths,
                       const std::string& out_override, std::ostream& log = std::cout) {
  if (config_paths.size() < 2)
    throw ContractError("compare: need at least 2 configs, got " +
                        std::to_string(config_paths.size()));
  std::vector<RunConfig> configs;
  for (const std::string& path : config_paths) configs.push_back(load_run_config(path));
  for (std::size_t i = 1; i < configs.size(); ++i)
    detail::require_same_suite(configs.front(), configs[i], config_paths[i]);

  // parameter-matched guard: trainable counts must agree within 2%
  std::vector<std::size_t> counts;
  for (const RunConfig& cfg : configs) counts.push_back(detail::param_count_of(cfg));
  const std::size_t lo = *std::min_element(counts.begin(), counts.end());
  const std::size_t hi = *std::max_element(counts.begin(), counts.end());
  if (static_cast<double>(hi - lo) > 0.02 * static_cast<double>(hi))
    throw ContractError("compare: trainable parameter counts differ by more than 2% (" +
                        std::to_string(lo) + " vs " + std::to_string(hi) +
                        "); refusing to compare unmatched architectures");

  nlohmann::ordered_json table;
  table["suite"] = config_to_json(configs.front());
  table["rows"] = nlohmann::ordered_json::array();
  std::string text = "architecture     params     eval_mse_mean\n";
  for (const RunConfig& cfg : configs) {
    TrainResult result = train_run(cfg);
    nlohmann::ordered_json row;
    row["architecture"] = cfg.architecture;
    row["trainable_params"] = result.report.trainable_params;
    row["final_eval_mean"] = result.report.final_eval_mean;
    row["final_eval_per_task"] = result.report.final_eval_per_task;
    table["rows"].push_back(std::move(row));
    char line[128];
    std::snprintf(line, sizeof(line), "%-16s %7zu  %16.8g\n", cfg.architecture.c_str(),
                  result.report.trainable_params, result.report.final_eval_mean);
    text += line;
  }
  const std::string out_dir = out_override.empty() ? configs.front().out_dir : out_override;
  detail::ensure_dir(out_dir);
  detail::write_text(out_dir + "/compare.json", table.dump(2) + "\n");
  detail::write_text(out_dir + "/compare.txt", text);
  log << text;
  log << "wrote " << out_dir << "/compare.json\n";
  return kExitOk;
}

inline int cmd_analyze(const std::string& checkpoint_path, const std::string& out_override,
                       const std::string& format, std::ostream& log = std::cout) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
  if (parse_architecture(ck.config.architecture) != Architecture::orchmoe)
    throw ContractError("analyze: checkpoint architecture '" + ck.config.architecture +
                        "' has no task-skill allocation to analyze");
  SyntheticTaskSuite suite = generate_suite(suite_spec_of(ck.config));
  std::vector<AllocationSnapshot> snapshots =
      collect_allocation_snapshots(ck.model, suite, ck.step);

  const std::string out_dir = out_override.empty() ? ck.config.out_dir : out_override;
  detail::ensure_dir(out_dir);
  const std::string base = out_dir + "/";

  // per-layer raw, row-normalized, and hard-thresholded allocation views
  std::vector<Tensor> usage_per_layer;
  for (const AllocationSnapshot& snap : snapshots) {
    const std::string suffix = "_layer" + std::to_string(snap.layer) + "." + format;
    export_snapshot(snap, base + "allocation" + suffix, format);
    AllocationSnapshot normalized = snap;
    normalized.matrix = normalize_rows(snap.matrix);
    export_snapshot(normalized, base + "normalized" + suffix, format);
    AllocationSnapshot hard = snap;
    hard.matrix = hard_allocation(snap.matrix);
    export_snapshot(hard, base + "hard_allocation" + suffix, format);
    usage_per_layer.push_back(skill_usage(snap.task_weight_stats, snap.matrix));
  }

  // real-task skill usage, combined across layers, then clustered
  Tensor usage = average_normalized(usage_per_layer);
  AllocationSnapshot usage_snap;
  usage_snap.layer = 0;
  usage_snap.step = ck.step;
  usage_snap.matrix = usage;
  export_snapshot(usage_snap, base + "usage." + format, format);

  std::unique_ptr<DendrogramNode> tree = cluster_tasks(usage);
  std::vector<std::vector<std::size_t>> clusters = cut_at_largest_gap(*tree);
  nlohmann::ordered_json dj;
  dj["distance"] = "euclidean";
  dj["linkage"] = "average";
  dj["layer_combination"] = "mean of row-normalized usage";
  dj["tree"] = dendrogram_to_json(*tree);
  dj["largest_gap_clusters"] = clusters;
  detail::write_text(base + "dendrogram.json", dj.dump(2) + "\n");

  log << "analyze ok: layers=" << snapshots.size() << " tasks=" << usage.rows()
      << " clusters=" << clusters.size() << "\n";
  log << "wrote " << base << "dendrogram.json\n";
  return kExitOk;
}

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"low-rank skill routing: training, comparison and analysis"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint_path, format = "json";
  std::vector<std::string> config_paths;
  std::uint64_t seed_override = 0;

  CLI::App* train = app.add_subcommand("train", "train one architecture on a synthetic suite");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--out", out_dir, "output directory (overrides config)");
  CLI::Option* seed_opt = train->add_option("--seed", seed_override, "seed override");
  train->add_option("--format", format, "snapshot format")
      ->check(CLI::IsMember({"json", "csv"}));

  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference checks for every registered op");

  CLI::App* compare =
      app.add_subcommand("compare", "train several architectures on one shared suite");
  compare->add_option("--config", config_paths, "two or more run configs")
      ->required()
      ->expected(-2);
  compare->add_option("--out", out_dir, "output directory (overrides first config)");

  CLI::App* analyze = app.add_subcommand("analyze", "cluster tasks by skill usage");
  analyze->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  analyze->add_option("--out", out_dir, "output directory (overrides checkpoint config)");
  analyze->add_option("--format", format, "matrix format")
      ->check(CLI::IsMember({"json", "csv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  return detail::guarded([&]() -> int {
    if (train->parsed())
      return cmd_train(config_path, out_dir, seed_opt->count() > 0, seed_override, format);
    if (gradcheck->parsed()) return cmd_gradcheck();
    if (compare->parsed()) return cmd_compare(config_paths, out_dir);
    if (analyze->parsed()) return cmd_analyze(checkpoint_path, out_dir, format);
    return kExitValidation;
  });
}

inline int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("orchmoe");
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace orchmoe

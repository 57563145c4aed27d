#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "orchmoe/checkpoint.hpp"
#include "orchmoe/cli.hpp"

using namespace orchmoe;
namespace fs = std::filesystem;

namespace {

fs::path work_dir() {
  static const fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / "orchmoe_io_tests";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

std::string write_json(const std::string& name, const std::string& body) {
  const fs::path p = work_dir() / name;
  std::ofstream(p) << body;
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// smallest run that exercises every artifact: three tasks, one group
std::string tiny_body(const std::string& arch, const std::string& extra = "") {
  return "{\"architecture\":\"" + arch +
         "\",\"seed\":7,\"d\":8,\"n_tokens\":4,\"T\":3,\"S\":2,\"r\":2,\"k\":1,"
         "\"T_real\":3,\"G\":1,\"n_train\":4,\"n_eval\":2,\"epochs\":2,\"batch_size\":4" +
         extra + "}";
}

using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;

}  // namespace

TEST_CASE("config loading points at the offending field") {
  REQUIRE_THROWS_MATCHES(load_run_config((work_dir() / "missing.json").string()), IoError,
                         MessageMatches(ContainsSubstring("cannot open config file")));
  REQUIRE_THROWS_AS(load_run_config(write_json("notjson.json", "{oops")), ContractError);
  REQUIRE_THROWS_MATCHES(load_run_config(write_json("noseed.json", "{\"architecture\":\"lora\"}")),
                         ContractError,
                         MessageMatches(ContainsSubstring("missing required field 'seed'")));
  REQUIRE_THROWS_MATCHES(load_run_config(write_json("noarch.json", "{\"seed\":1}")),
                         ContractError,
                         MessageMatches(ContainsSubstring("'architecture'")));
  REQUIRE_THROWS_MATCHES(
      load_run_config(write_json("unknown.json",
                                 "{\"architecture\":\"lora\",\"seed\":1,\"ranks\":3}")),
      ContractError, MessageMatches(ContainsSubstring("unknown field 'ranks'")));
  REQUIRE_THROWS_MATCHES(
      load_run_config(write_json("badint.json",
                                 "{\"architecture\":\"lora\",\"seed\":1,\"d\":\"big\"}")),
      ContractError, MessageMatches(ContainsSubstring("'d' must be a nonnegative integer")));
  REQUIRE_THROWS_MATCHES(
      load_run_config(write_json("badnum.json",
                                 "{\"architecture\":\"lora\",\"seed\":1,\"lr_max\":\"fast\"}")),
      ContractError, MessageMatches(ContainsSubstring("'lr_max' must be a number")));
  REQUIRE_THROWS_MATCHES(
      load_run_config(write_json("badstr.json", "{\"architecture\":3,\"seed\":1}")),
      ContractError, MessageMatches(ContainsSubstring("'architecture' must be a string")));
}

TEST_CASE("config validation enforces the documented ranges") {
  auto body = [](const std::string& extra) {
    return "{\"architecture\":\"orchmoe\",\"seed\":1" + extra + "}";
  };
  REQUIRE_THROWS_AS(load_run_config(write_json("v1.json", body(",\"d\":1"))), ContractError);
  REQUIRE_THROWS_AS(load_run_config(write_json("v2.json", body(",\"d\":4,\"r\":4"))),
                    ContractError);
  REQUIRE_THROWS_AS(load_run_config(write_json("v3.json", body(",\"warmup_ratio\":1.0"))),
                    ContractError);
  REQUIRE_THROWS_AS(load_run_config(write_json("v4.json", body(",\"out_dir\":\"\""))),
                    ContractError);
  REQUIRE_THROWS_AS(load_run_config(write_json("v5.json", body(",\"S\":4,\"k\":5"))),
                    ContractError);
  REQUIRE_THROWS_AS(load_run_config(write_json("v6.json", body(",\"T_real\":2,\"G\":3"))),
                    ContractError);
}

TEST_CASE("configs round-trip through their json echo") {
  RunConfig c;
  c.architecture = "moe-lora-topk";
  c.d = 12;
  c.depth = 2;
  c.n_tokens = 5;
  c.T = 7;
  c.S = 3;
  c.r = 2;
  c.k = 2;
  c.T_real = 9;
  c.G = 2;
  c.n_train = 6;
  c.n_eval = 3;
  c.noise_std = 0.05;
  c.group_scale = 0.6;
  c.task_perturb_scale = 0.3;
  c.lr_max = 2e-3;
  c.weight_decay = 0.02;
  c.warmup_ratio = 0.1;
  c.epochs = 4;
  c.batch_size = 2;
  c.seed = 99;
  c.out_dir = "elsewhere";
  RunConfig back = parse_run_config(config_to_json(c));
  REQUIRE(config_to_json(back) == config_to_json(c));
  REQUIRE(back.architecture == c.architecture);
  REQUIRE(back.lr_max == c.lr_max);
  REQUIRE(back.seed == c.seed);
  REQUIRE(back.out_dir == c.out_dir);
}

TEST_CASE("checkpoints restore parameters, config and step bitwise") {
  RunConfig cfg = parse_run_config(nlohmann::json::parse(tiny_body("orchmoe")));
  TrainResult r = train_run(cfg);
  const std::string path = (work_dir() / "ck.bin").string();
  save_checkpoint(path, r.model, cfg, 42);

  LoadedCheckpoint ck = load_checkpoint(path);
  REQUIRE(ck.step == 42);
  REQUIRE(config_to_json(ck.config) == config_to_json(cfg));

  auto orig = model_named_params(r.model);
  auto restored = model_named_params(ck.model);
  REQUIRE(orig.size() == restored.size());
  for (std::size_t i = 0; i < orig.size(); ++i) {
    REQUIRE(restored[i].first == orig[i].first);
    REQUIRE(restored[i].second.data() == orig[i].second.data());
  }

  // restored model computes the same function, bit for bit
  const Tensor& x = r.suite.eval_samples[0][0].x;
  Tensor a = model_forward(r.model, x, ForwardMode::eval, 0);
  Tensor b = model_forward(ck.model, x, ForwardMode::eval, 0);
  REQUIRE(a.data() == b.data());
}

TEST_CASE("checkpoint files are byte identical across saves") {
  RunConfig cfg = parse_run_config(nlohmann::json::parse(tiny_body("shared")));
  TrainResult r = train_run(cfg);
  const std::string p1 = (work_dir() / "ck_a.bin").string();
  const std::string p2 = (work_dir() / "ck_b.bin").string();
  save_checkpoint(p1, r.model, cfg, 7);
  save_checkpoint(p2, r.model, cfg, 7);
  REQUIRE(slurp(p1) == slurp(p2));
}

TEST_CASE("checkpoint loading pinpoints corruption") {
  RunConfig cfg = parse_run_config(nlohmann::json::parse(tiny_body("lora")));
  TrainResult r = train_run(cfg);
  const std::string good = (work_dir() / "ck_good.bin").string();
  save_checkpoint(good, r.model, cfg, 3);
  const std::string bytes = slurp(good);

  auto write_bytes = [&](const std::string& name, const std::string& content) {
    const std::string p = (work_dir() / name).string();
    std::ofstream(p, std::ios::binary) << content;
    return p;
  };

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  REQUIRE_THROWS_MATCHES(load_checkpoint(write_bytes("ck_magic.bin", bad_magic)), IoError,
                         MessageMatches(ContainsSubstring("bad magic at byte 0")));

  std::string bad_version = bytes;
  bad_version[4] = '\x2a';
  REQUIRE_THROWS_MATCHES(load_checkpoint(write_bytes("ck_ver.bin", bad_version)), IoError,
                         MessageMatches(ContainsSubstring("unsupported format version 42")));

  std::string bad_header = bytes;
  bad_header[16] = 'X';  // first byte of the json header
  REQUIRE_THROWS_MATCHES(load_checkpoint(write_bytes("ck_hdr.bin", bad_header)), IoError,
                         MessageMatches(ContainsSubstring("corrupt header at byte 16")));

  REQUIRE_THROWS_MATCHES(
      load_checkpoint(write_bytes("ck_trunc.bin", bytes.substr(0, bytes.size() - 9))), IoError,
      MessageMatches(ContainsSubstring("unexpected end at byte")));

  REQUIRE_THROWS_AS(load_checkpoint((work_dir() / "ck_missing.bin").string()), IoError);
}

TEST_CASE("the gradient checker catches a wrong adjoint") {
  // an op whose backward pass flips the sign of the true adjoint
  auto broken_scale = [](const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = c * a.data()[i];
    auto an = a.node_ptr();
    detail::track(out, {&a}, [an, c](const std::vector<double>& g) {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] -= c * g[i];
    });
    return out;
  };

  GradCheckCase sabotaged;
  sabotaged.name = "broken scale";
  sabotaged.x0 = Tensor::from(2, 2, {0.3, -0.8, 1.2, 0.5});
  sabotaged.loss = [&](Tensor& x) { return sum_all(broken_scale(x, 1.7)); };
  GradCheckResult r = run_grad_check(sabotaged);
  REQUIRE_FALSE(r.pass);
  REQUIRE(r.max_rel_err > 0.1);

  GradCheckCase honest;
  honest.name = "scale";
  honest.x0 = sabotaged.x0;
  honest.loss = [](Tensor& x) { return sum_all(scale(x, 1.7)); };
  REQUIRE(run_grad_check(honest).pass);
}

TEST_CASE("the standard gradcheck battery passes and covers the full layer") {
  bool saw_layer_case = false;
  for (const GradCheckCase& c : standard_gradcheck_cases()) {
    GradCheckResult r = run_grad_check(c);
    INFO(r.name << " max_rel_err=" << r.max_rel_err);
    REQUIRE(r.pass);
    if (r.name.find("layer") != std::string::npos) saw_layer_case = true;
  }
  REQUIRE(saw_layer_case);
}

TEST_CASE("cli maps outcomes onto documented exit codes") {
  std::ostringstream sink;
  REQUIRE(cmd_gradcheck(sink) == 0);
  REQUIRE_THAT(sink.str(), ContainsSubstring("gradcheck: all checks passed"));

  REQUIRE(run_cli({"train"}) == kExitValidation);            // missing --config
  REQUIRE(run_cli({"definitely-not-a-command"}) == kExitValidation);
  REQUIRE(run_cli({"--help"}) == kExitOk);

  const std::string bad = write_json("cli_bad.json", tiny_body("orchmoe", ",\"ranks\":3"));
  REQUIRE(run_cli({"train", "--config", bad}) == kExitValidation);
  REQUIRE(run_cli({"train", "--config", (work_dir() / "nope.json").string()}) == kExitIo);
}

TEST_CASE("train command writes deterministic artifacts") {
  const std::string cfg = write_json("cli_train.json", tiny_body("orchmoe"));
  const std::string out1 = (work_dir() / "run1").string();
  REQUIRE(run_cli({"train", "--config", cfg, "--out", out1}) == kExitOk);

  REQUIRE(fs::exists(out1 + "/report.json"));
  REQUIRE(fs::exists(out1 + "/checkpoint.bin"));
  REQUIRE(fs::exists(out1 + "/alloc_layer0.json"));
  REQUIRE(fs::exists(out1 + "/alloc_layer2.json"));

  // rerunning the identical invocation reproduces every artifact bitwise
  const std::string report_bytes = slurp(out1 + "/report.json");
  const std::string ck_bytes = slurp(out1 + "/checkpoint.bin");
  REQUIRE(run_cli({"train", "--config", cfg, "--out", out1}) == kExitOk);
  REQUIRE(slurp(out1 + "/report.json") == report_bytes);
  REQUIRE(slurp(out1 + "/checkpoint.bin") == ck_bytes);

  const std::string out3 = (work_dir() / "run3").string();
  REQUIRE(run_cli({"train", "--config", cfg, "--out", out3, "--seed", "99"}) == kExitOk);
  nlohmann::json report = nlohmann::json::parse(slurp(out3 + "/report.json"));
  REQUIRE(report["config"]["seed"] == 99);
  REQUIRE(slurp(out3 + "/report.json") != slurp(out1 + "/report.json"));

  const std::string out4 = (work_dir() / "run4").string();
  REQUIRE(run_cli({"train", "--config", cfg, "--out", out4, "--format", "csv"}) == kExitOk);
  REQUIRE(fs::exists(out4 + "/alloc_layer0.csv"));
}

TEST_CASE("compare refuses mismatched setups and reports matched ones") {
  const std::string moe = write_json("cmp_moe.json", tiny_body("orchmoe"));
  const std::string lora = write_json("cmp_lora.json", tiny_body("lora"));
  const std::string out = (work_dir() / "cmp").string();
  REQUIRE(run_cli({"compare", "--config", moe, "--config", lora, "--out", out}) == kExitOk);

  nlohmann::json cj = nlohmann::json::parse(slurp(out + "/compare.json"));
  REQUIRE(cj["rows"].size() == 2);
  REQUIRE(cj["rows"][0]["architecture"] == "orchmoe");
  REQUIRE(cj["rows"][1]["architecture"] == "lora");
  REQUIRE(cj["rows"][0]["final_eval_per_task"].size() == 3);
  const double p0 = cj["rows"][0]["trainable_params"].get<double>();
  const double p1 = cj["rows"][1]["trainable_params"].get<double>();
  REQUIRE(std::fabs(p0 - p1) / p0 < 0.02);
  REQUIRE(fs::exists(out + "/compare.txt"));

  // same suite but a far smaller adapter: parameter matching must refuse
  const std::string fat = write_json("cmp_fat.json",
                                     tiny_body("orchmoe").replace(
                                         tiny_body("orchmoe").find("\"r\":2"), 5, "\"r\":4"));
  REQUIRE(run_cli({"compare", "--config", fat, "--config", lora, "--out", out}) ==
          kExitValidation);

  // diverging suite fields are a user error, not a silent re-generation
  const std::string other_suite =
      write_json("cmp_g3.json", tiny_body("lora", ",\"group_scale\":0.5"));
  REQUIRE(run_cli({"compare", "--config", moe, "--config", other_suite, "--out", out}) ==
          kExitValidation);
}

TEST_CASE("analyze reads a composed checkpoint and writes cluster reports") {
  const std::string cfg = write_json("an_moe.json", tiny_body("orchmoe"));
  const std::string train_out = (work_dir() / "an_run").string();
  REQUIRE(run_cli({"train", "--config", cfg, "--out", train_out}) == kExitOk);

  const std::string out = (work_dir() / "an_out").string();
  REQUIRE(run_cli({"analyze", "--checkpoint", train_out + "/checkpoint.bin", "--out", out}) ==
          kExitOk);
  for (const char* f : {"/allocation_layer0.json", "/normalized_layer1.json",
                        "/hard_allocation_layer2.json", "/usage.json", "/dendrogram.json"})
    REQUIRE(fs::exists(out + f));

  nlohmann::json dj = nlohmann::json::parse(slurp(out + "/dendrogram.json"));
  REQUIRE(dj["distance"] == "euclidean");
  REQUIRE(dj["linkage"] == "average");
  REQUIRE(dj["tree"]["count"] == 3);
  REQUIRE(dj["largest_gap_clusters"].is_array());

  // a plain adapter has no allocation to analyze
  const std::string lcfg = write_json("an_lora.json", tiny_body("lora"));
  const std::string lora_out = (work_dir() / "an_lora_run").string();
  REQUIRE(run_cli({"train", "--config", lcfg, "--out", lora_out}) == kExitOk);
  REQUIRE(run_cli({"analyze", "--checkpoint", lora_out + "/checkpoint.bin", "--out", out}) ==
          kExitValidation);

  REQUIRE(run_cli({"analyze", "--checkpoint", (work_dir() / "no_ck.bin").string()}) ==
          kExitIo);
}

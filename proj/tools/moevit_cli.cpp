// moevit: cost sweeps, desk-scale training, property checks, and routing
// statistics behind one binary.
//
// Exit codes: 0 success, 1 property failure, 2 usage/config error,
// 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "moevit/checks.hpp"
#include "moevit/config.hpp"
#include "moevit/cost_model.hpp"
#include "moevit/model.hpp"

namespace {

using namespace moevit;

constexpr int kOk = 0;
constexpr int kPropertyFailure = 1;
constexpr int kConfigError = 2;
constexpr int kNumericFailure = 3;

RunConfig load_config(const std::string& path,
                      const std::vector<std::string>& overrides) {
  RunConfig cfg = path.empty() ? RunConfig{} : parse_config_file(path);
  for (const auto& assignment : overrides) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
      throw config_error("--set expects key=value, got '" + assignment + "'");
    cfg.set(assignment.substr(0, eq), assignment.substr(eq + 1));
  }
  return cfg;
}

int cmd_flops(const std::string& dataset, std::vector<size_t> patches,
              std::vector<size_t> topks, size_t n, size_t c, size_t d,
              const std::string& format, bool verify_paper) {
  if (verify_paper) {
    bool all_ok = true;
    for (const auto& pt : verify_paper_points()) {
      const bool ok = pt.pass();
      all_ok = all_ok && ok;
      std::printf("%s %s  model=%0.4fG\n", ok ? "PASS" : "FAIL",
                  pt.label.c_str(), pt.actual_gflops);
    }
    return all_ok ? kOk : kPropertyFailure;
  }

  std::vector<SweepRow> rows;
  if (dataset == "custom") {
    if (n == 0 || c == 0 || d == 0)
      throw config_error("custom geometry needs --n, --c, --d all >= 1");
    rows.push_back({"vanilla", dataset, n, c, d, 0, 0,
                    vanilla_cost(n, d).gflops(), 0});
    rows.push_back({"dense", dataset, n, c, d, 0, 0,
                    dense_cost(n, c, d).gflops(), 0});
    for (size_t k : topks) {
      const CostReport r = moe_cost(n, c, d, k);
      rows.push_back({"moe", dataset, n, c, d, 0, k, r.gflops(), 0});
      std::printf("# total_flops: moe(N=%zu,C=%zu,D=%zu,k=%zu) = %.0f\n", n, c,
                  d, k, r.total_flops());
    }
  } else {
    size_t height, width, channels;
    if (dataset == "jumpcp") {
      height = width = 224;
      channels = 8;
    } else if (dataset == "so2sat") {
      height = width = 32;
      channels = 18;
    } else {
      throw config_error("unknown dataset '" + dataset +
                         "' (expected jumpcp|so2sat|custom)");
    }
    if (d == 0) d = 384;
    rows = sweep(dataset, height, width, channels, d, patches, topks);
  }
  std::fputs(format == "table" ? sweep_table(rows).c_str()
                               : sweep_csv(rows).c_str(),
             stdout);
  return kOk;
}

int cmd_train(const std::string& config_path,
              const std::vector<std::string>& overrides,
              const std::string& metrics_path,
              const std::string& checkpoint_dir) {
  RunConfig cfg = load_config(config_path, overrides);
  cfg.spec.validate();
  TrainState state = train(cfg.spec, cfg.task, cfg.opt);

  std::ofstream metrics(metrics_path);
  if (!metrics)
    throw config_error("cannot write metrics file: " + metrics_path);
  metrics << "step,loss,ce_loss,balance_loss,train_acc,eval_acc\n";
  char buf[160];
  for (const auto& m : state.history) {
    std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.6f,%.6f,%.6f\n", m.step,
                  m.loss, m.ce_loss, m.balance_loss, m.train_acc, m.eval_acc);
    metrics << buf;
  }
  metrics.close();

  std::filesystem::create_directories(checkpoint_dir);
  save_checkpoint(checkpoint_dir, state);
  if (!state.history.empty()) {
    const auto& last = state.history.back();
    std::printf("trained %zu steps, final eval_acc %.4f\n", last.step,
                last.eval_acc);
  }
  std::printf("metrics: %s\ncheckpoint: %s\n", metrics_path.c_str(),
              checkpoint_dir.c_str());
  return kOk;
}

int cmd_check(uint64_t seed, size_t cases, bool inject_fault) {
  if (cases == 0) {
    std::printf("warning: --cases 0, no checks run\n");
    return kOk;
  }
  if (inject_fault) inject_matmul_backward_fault(true);
  CheckSummary summary = run_all_checks(seed, cases);
  if (inject_fault) inject_matmul_backward_fault(false);
  std::printf("checks run: %zu, failures: %zu\n", summary.cases_run,
              summary.failures.size());
  for (const auto& f : summary.failures)
    std::printf("FAIL [%s] %s\n", f.suite.c_str(), f.detail.c_str());
  return summary.ok() ? kOk : kPropertyFailure;
}

int cmd_route_stats(const std::string& checkpoint_dir,
                    const std::string& config_path,
                    const std::vector<std::string>& overrides, size_t images) {
  RunConfig cfg = load_config(config_path, overrides);
  cfg.spec.validate();
  if (!std::filesystem::exists(checkpoint_dir + "/manifest.txt"))
    throw config_error("checkpoint not found: " + checkpoint_dir);
  TrainState state = load_checkpoint(checkpoint_dir, cfg.spec);

  auto data = gen_synthetic(cfg.task, images, /*split_seed=*/1);
  std::vector<MultiChannelImage> imgs;
  for (auto& s : data) imgs.push_back(std::move(s.image));
  RouteStats stats = route_stats(cfg.spec, state.params, imgs);

  const size_t tokens_per_layer =
      images * cfg.spec.n_patches() * cfg.spec.channels;
  char buf[128];
  for (size_t l = 0; l < cfg.spec.layers; ++l) {
    std::printf("# layer %zu\n", l);
    std::printf("channel,importance,load,n_k\n");
    for (size_t c = 0; c < cfg.spec.channels; ++c) {
      const double load_frac =
          (double)stats.load[l][c] / (double)(cfg.spec.topk * tokens_per_layer);
      std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%zu\n", c,
                    stats.importance[l][c], load_frac, stats.load[l][c]);
      std::fputs(buf, stdout);
    }
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Channel-MoE attention toolkit"};
  app.require_subcommand(1);

  // flops
  auto* flops = app.add_subcommand("flops", "Analytic attention cost sweeps");
  std::string dataset = "jumpcp";
  std::vector<size_t> patches{16};
  std::vector<size_t> topks{1, 2};
  size_t n = 0, c = 0;
  size_t d = 0;
  std::string format = "csv";
  bool verify_paper = false;
  flops->add_option("--dataset", dataset, "jumpcp|so2sat|custom");
  flops->add_option("--patch", patches, "patch sizes to sweep");
  flops->add_option("--topk", topks, "top-k values to sweep");
  flops->add_option("--n", n, "custom: token count N");
  flops->add_option("--c", c, "custom: channel count C");
  flops->add_option("--d", d, "embedding width D (default 384)");
  flops->add_option("--format", format, "csv|table");
  flops->add_flag("--verify-paper", verify_paper,
                  "check the published attention-GFLOPs values");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train on the synthetic task");
  std::string config_path;
  std::vector<std::string> overrides;
  std::string metrics_path = "metrics.csv";
  std::string checkpoint_dir = "checkpoint";
  train_cmd->add_option("--config", config_path, "key=value config file");
  train_cmd->add_option("--set", overrides, "override: key=value");
  train_cmd->add_option("--metrics", metrics_path, "metrics CSV output path");
  train_cmd->add_option("--checkpoint", checkpoint_dir,
                        "checkpoint output directory");

  // check
  auto* check = app.add_subcommand("check", "Run the property suites");
  uint64_t check_seed = 1;
  size_t cases = 120;
  bool inject_fault = false;
  check->add_option("--seed", check_seed, "base seed");
  check->add_option("--cases", cases, "randomized case count (0 = skip)");
  check
      ->add_flag("--inject-matmul-fault", inject_fault,
                 "test fixture: corrupt the matmul backward rule")
      ->group("");  // hidden

  // route-stats
  auto* rs = app.add_subcommand("route-stats",
                                "Per-layer channel routing statistics");
  std::string rs_checkpoint;
  std::string rs_config;
  std::vector<std::string> rs_overrides;
  size_t rs_images = 16;
  rs->add_option("--checkpoint", rs_checkpoint, "checkpoint directory")
      ->required();
  rs->add_option("--config", rs_config, "key=value config file");
  rs->add_option("--set", rs_overrides, "override: key=value");
  rs->add_option("--images", rs_images, "synthetic images to route");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (flops->parsed())
      return cmd_flops(dataset, patches, topks, n, c, d, format, verify_paper);
    if (train_cmd->parsed())
      return cmd_train(config_path, overrides, metrics_path, checkpoint_dir);
    if (check->parsed()) return cmd_check(check_seed, cases, inject_fault);
    if (rs->parsed())
      return cmd_route_stats(rs_checkpoint, rs_config, rs_overrides, rs_images);
  } catch (const train_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumericFailure;
  } catch (const config_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  }
  return kConfigError;
}

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "boxboot/config.hpp"
#include "boxboot/errors.hpp"
#include "boxboot/gradsuites.hpp"
#include "boxboot/net.hpp"
#include "boxboot/synthdata.hpp"
#include "boxboot/trainer.hpp"

namespace {

using namespace boxboot;

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

int cmd_gen_data(const std::string& config_path, const std::string& out_dir,
                 int n) {
  const RunConfig cfg = parse_config_file(config_path);
  const Dataset ds = build_dataset(cfg.scene, n, cfg.pp_ratio);
  write_dataset(out_dir, ds);
  std::printf("boxboot-dataset v1 n=%d w=%d h=%d classes=%d\n", n, ds.width,
              ds.height, ds.classes);
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
  const RunConfig cfg = parse_config_file(config_path);
  const Dataset ds = read_dataset(data_dir);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory " + out_dir);

  const TrainResult result = train(ds, cfg.train);
  write_metrics_csv(out_dir + "/metrics.csv", result.history, ds.classes);
  save_checkpoint(out_dir + "/final.ckpt", result.params);
  if (result.aborted) {
    std::fprintf(stderr, "train aborted at step %d: %s\n", result.abort_step,
                 result.abort_reason.c_str());
    return kExitCheckFailure;
  }
  if (cfg.export_masks) {
    export_val_masks(out_dir, ds, result.params, cfg.train.tau,
                     cfg.train.slope);
  }
  std::printf("miou=%.17g\n",
              result.history.empty() ? 0.0 : result.history.back().miou);
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir) {
  const NetworkParams params = load_checkpoint(ckpt_path);
  const Dataset ds = read_dataset(data_dir);
  const bool compatible = params.classes == 1
                              ? ds.classes == 1
                              : params.classes == ds.classes + 1;
  if (!compatible) {
    throw ConfigError("checkpoint has " + std::to_string(params.classes) +
                      " model classes, dataset has " +
                      std::to_string(ds.classes) + " object classes");
  }
  const EvalResult ev = evaluate(ds, params, 2.5);
  for (std::size_t c = 0; c < ev.iou.size(); ++c) {
    std::printf("iou_c%zu=%.17g\n", c + 1, ev.iou[c]);
  }
  std::printf("miou=%.17g\n", ev.miou);
  return kExitOk;
}

int cmd_grad_check(const std::string& loss_filter) {
  std::vector<SuiteResult> results;
  const std::uint64_t seed = 20240901;
  if (loss_filter.empty()) {
    results = run_all_suites(seed);
  } else if (loss_filter == "BcePlain") {
    results = {suite_bce_plain(seed)};
  } else if (loss_filter == "L2Unc") {
    results = {suite_l2_unc(seed)};
  } else if (loss_filter == "BceUncBootstrap") {
    results = {suite_bce_unc_bootstrap(seed)};
  } else if (loss_filter == "MultiClass") {
    results = {suite_multiclass(seed)};
  } else {
    throw ConfigError("unknown loss variant: " + loss_filter);
  }
  bool all_pass = true;
  for (const SuiteResult& r : results) {
    std::printf("suite=%s max_rel_err=%.3g tol=%g %s\n", r.name.c_str(),
                r.max_rel_err, r.tol, r.pass() ? "pass" : "FAIL");
    all_pass = all_pass && r.pass();
  }
  return all_pass ? kExitOk : kExitCheckFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uncertainty-based online bootstrapping for weakly-supervised "
               "segmentation"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, ckpt_path, loss_filter;
  int n_images = 0;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--config", config_path, "config file")->required();
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--n", n_images, "number of scenes")->required();

  CLI::App* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--config", config_path, "config file")->required();
  tr->add_option("--data", data_dir, "dataset directory")->required();
  tr->add_option("--out", out_dir, "output directory")->required();

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  ev->add_option("--data", data_dir, "dataset directory")->required();

  CLI::App* gc = app.add_subcommand("grad-check", "finite-difference suites");
  gc->add_option("--loss", loss_filter, "run only this variant's suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out_dir, n_images);
    if (tr->parsed()) return cmd_train(config_path, data_dir, out_dir);
    if (ev->parsed()) return cmd_eval(ckpt_path, data_dir);
    if (gc->parsed()) return cmd_grad_check(loss_filter);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitCheckFailure;
  }
  return kExitConfig;
}

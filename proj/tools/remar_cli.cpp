#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "remar/checkpoint.hpp"
#include "remar/data.hpp"
#include "remar/image_io.hpp"
#include "remar/manifest.hpp"
#include "remar/metrics.hpp"
#include "remar/serialize.hpp"
#include "remar/trainer.hpp"
#include "remar/verify.hpp"

namespace fs = std::filesystem;
using namespace remar;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string out = "out";
};

struct DataOptions {
  std::string data_dir;
  std::size_t patients = 10;
  std::size_t slices = 10;
  std::size_t size = 64;
  double artifact_rate = 0.15;
  double train_fraction = 0.7;
};

void add_data_options(CLI::App* cmd, DataOptions& d, bool with_dir) {
  if (with_dir) cmd->add_option("--data", d.data_dir, "dataset directory written by gen-data");
  cmd->add_option("--patients", d.patients, "number of synthetic patients")->check(CLI::PositiveNumber);
  cmd->add_option("--slices", d.slices, "slices per patient")->check(CLI::PositiveNumber);
  cmd->add_option("--size", d.size, "slice side length in pixels")->check(CLI::PositiveNumber);
  cmd->add_option("--artifact-rate", d.artifact_rate, "expected fraction of metal slices")
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--train-fraction", d.train_fraction, "patient fraction used for training")
      ->check(CLI::Range(0.0, 1.0));
}

PhantomSpec phantom_from(const DataOptions& d) {
  PhantomSpec p;
  p.size = d.size;
  p.artifact_rate = d.artifact_rate;
  return p;
}

KeyValues data_config(const DataOptions& d) {
  KeyValues kv;
  if (!d.data_dir.empty()) kv["data"] = d.data_dir;
  kv["patients"] = std::to_string(d.patients);
  kv["slices"] = std::to_string(d.slices);
  kv["size"] = std::to_string(d.size);
  kv["artifact_rate"] = std::to_string(d.artifact_rate);
  kv["train_fraction"] = std::to_string(d.train_fraction);
  return kv;
}

std::vector<SlicePair> load_or_generate(const DataOptions& d, std::uint64_t seed) {
  if (!d.data_dir.empty()) return read_dataset(d.data_dir);
  return generate_dataset(seed, phantom_from(d), d.patients, d.slices);
}

void merge(KeyValues& into, const KeyValues& from, const std::string& prefix = {}) {
  for (const auto& [k, v] : from) into[prefix + k] = v;
}

int cmd_gen_data(const Globals& g, const DataOptions& d) {
  const auto pairs = generate_dataset(g.seed, phantom_from(d), d.patients, d.slices);
  const fs::path out = g.out;
  auto files = write_dataset(out, pairs);
  const auto split = build_split(pairs, d.train_fraction, g.seed);
  std::cout << "wrote " << pairs.size() << " slice pairs for " << d.patients << " patients to "
            << out << "\nartifact fraction " << std::fixed << std::setprecision(3)
            << split.artifact_fraction << " (" << split.train_art.size() + split.test_art.size()
            << " D_Art slices)\n";
  write_run_manifest(out, "gen-data", g.seed, data_config(d), files);
  return 0;
}

TrainConfig load_train_config(const std::string& path, const Globals& g, bool seed_given) {
  TrainConfig cfg = path.empty() ? TrainConfig{} : TrainConfig::from_map(load_key_values(path));
  if (seed_given || path.empty()) cfg.seed = g.seed;
  return cfg;
}

void save_run_outputs(const fs::path& out, const RunResult& run, std::vector<fs::path>& files) {
  fs::create_directories(out);
  save_checkpoint(out / "model.ckpt", run.training.model);
  write_step_log(out / "steps.csv", run.training.steps);
  write_lr_log(out / "lr.csv", run.training.epochs);
  {
    std::ofstream f(out / "eval.csv");
    run.report.write_csv(f);
  }
  {
    std::ofstream f(out / "summary.csv");
    run.report.write_summary(f);
  }
  for (const char* name : {"model.ckpt", "steps.csv", "lr.csv", "eval.csv", "summary.csv"}) {
    files.push_back(out / name);
  }
}

int cmd_train(const Globals& g, bool seed_given, const std::string& config_path,
              const DataOptions& d) {
  const TrainConfig cfg = load_train_config(config_path, g, seed_given);
  const auto pairs = load_or_generate(d, cfg.seed);
  const auto split = build_split(pairs, d.train_fraction, cfg.seed);
  const auto run = train_and_evaluate(cfg, pairs, split);
  const fs::path out = g.out;
  std::vector<fs::path> files;
  save_run_outputs(out, run, files);
  std::cout << "trained " << run.training.steps.size() << " steps (" << run.training.stop_reason
            << ")\n";
  if (run.training.diverged) std::cout << "warning: training diverged; last good state saved\n";
  run.report.write_summary(std::cout);
  KeyValues kv = cfg.to_map();
  merge(kv, data_config(d), "data.");
  write_run_manifest(out, "train", cfg.seed, kv, files);
  return run.training.diverged ? 2 : 0;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const DataOptions& d, bool all) {
  const ReMarNet model = load_checkpoint(checkpoint);
  const auto pairs = load_or_generate(d, g.seed);
  EvalReport report;
  if (all) {
    std::vector<std::size_t> idx(pairs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    report = evaluate_examples(model, make_examples(pairs, idx, LossSpec{}));
  } else {
    report = evaluate_split(model, pairs, build_split(pairs, d.train_fraction, g.seed));
  }
  const fs::path out = g.out;
  fs::create_directories(out);
  {
    std::ofstream f(out / "eval.csv");
    report.write_csv(f);
    std::ofstream s(out / "summary.csv");
    report.write_summary(s);
  }
  report.write_summary(std::cout);
  KeyValues kv = data_config(d);
  kv["checkpoint"] = checkpoint;
  kv["all_slices"] = all ? "true" : "false";
  write_run_manifest(out, "eval", g.seed, kv, {out / "eval.csv", out / "summary.csv"});
  return 0;
}

int cmd_reconstruct(const Globals& g, const std::string& checkpoint, const std::string& input,
                    const std::string& target) {
  const ReMarNet model = load_checkpoint(checkpoint);
  const SliceRecord kv = load_slice(input);
  if (kv.size % (std::size_t{1} << (model.config().levels - 1)) != 0) {
    throw std::invalid_argument("slice size " + std::to_string(kv.size) +
                                " is incompatible with a " +
                                std::to_string(model.config().levels) + "-level model");
  }
  TrainingExample ex;
  ex.size = kv.size;
  ex.input = normalize_hu(kv.hu);
  ex.mask = kv.mask;
  const auto recon = reconstruct(model, ex);
  const auto recon_hu = denormalize_hu(recon);

  const fs::path out = g.out;
  fs::create_directories(out);
  save_tensor(out / "recon.rmds", {kv.size, kv.size}, recon_hu);
  std::vector<std::vector<double>> panels{kv.hu, recon_hu};
  if (!target.empty()) {
    const SliceRecord mv = load_slice(target);
    if (mv.size != kv.size) throw std::invalid_argument("target slice size differs from input");
    panels.push_back(mv.hu);
    const auto t = normalize_hu(mv.hu);
    const auto psnr = masked_psnr(recon, t, kv.mask, 2.0);
    const double ssim = masked_ssim(recon, t, kv.mask, kv.size, kv.size);
    std::cout << std::setprecision(12) << "masked_psnr_db " << psnr.db
              << (psnr.capped ? " (capped)" : "") << "\nmasked_ssim " << ssim << '\n';
  }
  write_panels_png(out / "recon.png", kv.size, panels);
  std::cout << "wrote " << (out / "recon.png").string() << " (" << panels.size() << " panels)\n";
  KeyValues cfg{{"checkpoint", checkpoint}, {"input", input}, {"target", target}};
  write_run_manifest(out, "reconstruct", g.seed, cfg, {out / "recon.rmds", out / "recon.png"});
  return 0;
}

int cmd_grid(const Globals& g, bool seed_given, const std::string& preset,
             const std::string& config_path, const DataOptions& d) {
  GridSpec spec;
  spec.preset = preset;
  spec.base = load_train_config(config_path, g, seed_given);
  spec.phantom = phantom_from(d);
  spec.patients = d.patients;
  spec.slices_per_patient = d.slices;
  spec.train_fraction = d.train_fraction;
  const fs::path out = g.out;
  const auto grid = run_grid(spec, out);
  grid.write_table(std::cout);
  KeyValues kv = spec.base.to_map();
  merge(kv, data_config(d), "data.");
  kv["preset"] = preset;
  write_run_manifest(out, "grid", spec.base.seed, kv, {out / "table.csv"});
  for (const auto& r : grid.rows) {
    if (!r.error.empty()) return 2;
  }
  return 0;
}

int cmd_verify(const Globals& g, std::size_t seeds, bool fault) {
  VerifyOptions opts;
  opts.seeds = seeds;
  opts.base_seed = g.seed + 1;
  opts.inject_conv_fault = fault;
  const auto results = run_verify(opts);
  print_check_table(std::cout, results);
  const bool ok = all_passed(results);
  std::cout << (ok ? "all checks passed\n" : "some checks FAILED\n");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Metal artifact reduction: synthetic data, training, evaluation"};
  app.require_subcommand(1);
  Globals g;
  auto* seed_opt = app.add_option("--seed", g.seed, "random seed")->capture_default_str();
  app.add_option("--out", g.out, "output directory")->capture_default_str();

  DataOptions gen_opts, train_opts, eval_opts, grid_opts;
  std::string config_path, checkpoint, input, target, preset = "table1";
  bool eval_all = false;
  bool fault = false;
  std::size_t verify_seeds = 5;

  auto* gen = app.add_subcommand("gen-data", "generate a paired kVCT/MVCT phantom dataset");
  add_data_options(gen, gen_opts, false);

  auto* tr = app.add_subcommand("train", "train one model and evaluate it on the test patients");
  tr->add_option("--config", config_path, "key=value training config");
  add_data_options(tr, train_opts, true);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_flag("--all", eval_all, "score every slice instead of the test patients");
  add_data_options(ev, eval_opts, true);

  auto* rc = app.add_subcommand("reconstruct", "reconstruct one slice and render a PNG");
  rc->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  rc->add_option("--input", input, "kVCT slice file")->required();
  rc->add_option("--target", target, "MVCT slice file");

  auto* gr = app.add_subcommand("grid", "run the loss or ablation experiment grid");
  gr->add_option("--preset", preset, "table1 | table2")->check(CLI::IsMember({"table1", "table2"}));
  gr->add_option("--config", config_path, "key=value base training config");
  add_data_options(gr, grid_opts, false);

  auto* vf = app.add_subcommand("verify", "run the gradient and oracle check suite");
  vf->add_option("--seeds", verify_seeds, "random seeds per check")->check(CLI::PositiveNumber);
  vf->add_flag("--inject-conv-fault", fault, "corrupt conv2d's weight gradient");

  CLI11_PARSE(app, argc, argv);
  const bool seed_given = seed_opt->count() > 0;
  try {
    if (*gen) return cmd_gen_data(g, gen_opts);
    if (*tr) return cmd_train(g, seed_given, config_path, train_opts);
    if (*ev) return cmd_eval(g, checkpoint, eval_opts, eval_all);
    if (*rc) return cmd_reconstruct(g, checkpoint, input, target);
    if (*gr) return cmd_grid(g, seed_given, preset, config_path, grid_opts);
    if (*vf) return cmd_verify(g, verify_seeds, fault);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

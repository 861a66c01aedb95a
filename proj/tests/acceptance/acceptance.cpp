// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "remar/data.hpp"
#include "remar/losses.hpp"
#include "remar/manifest.hpp"
#include "remar/metrics.hpp"
#include "remar/network.hpp"
#include "remar/trainer.hpp"
#include "remar/verify.hpp"

namespace fs = std::filesystem;
using namespace remar;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool passed = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      passed = false;
      detail << " [failed: " << what << "]";
    }
  }
};

std::string failed_checks(const std::vector<CheckResult>& results) {
  std::string out;
  for (const auto& r : results) {
    if (!r.passed) out += " " + r.name;
  }
  return out;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

Outcome gradient_correctness() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto results = gradient_checks();
  const double secs = seconds_since(t0);
  double worst_op = 0.0;
  double model = 0.0;
  for (const auto& r : results) {
    if (r.name == "grad.model_end_to_end") {
      model = r.value;
    } else {
      worst_op = std::max(worst_op, r.value);
    }
  }
  o.detail << results.size() << " checks x 5 seeds, worst op rel err " << std::scientific
           << std::setprecision(2) << worst_op << ", end-to-end " << model << std::fixed
           << ", " << std::setprecision(1) << secs << " s";
  o.require(all_passed(results), "gradient checks:" + failed_checks(results));
  o.require(secs < 120.0, "runtime over 2 min");
  return o;
}

Outcome oracle_equivalence() {
  Outcome o;
  const auto results = oracle_checks();
  o.detail << std::scientific << std::setprecision(2);
  for (const auto& r : results) o.detail << r.name.substr(7) << "=" << r.value << " ";
  o.require(all_passed(results), "oracles:" + failed_checks(results));
  return o;
}

Outcome architecture_invariants() {
  Outcome o;
  for (const auto& r : invariant_checks()) {
    if (r.criterion == 3) o.require(r.passed, r.name + " " + r.detail);
  }
  ModelConfig base;
  base.levels = 3;
  base.base_channels = 8;
  ModelConfig plain = base;
  plain.use_enresb = false;
  o.require(parameter_count(base) < parameter_count(plain), "EnResB not smaller than plain");

  PhantomSpec ps;
  ps.size = 32;
  ps.artifact_rate = 0.3;
  const auto pairs = generate_dataset(11, ps, 4, 4);
  const auto split = build_split(pairs, 0.7, 11);
  std::size_t trained = 0;
  std::vector<std::pair<std::string, std::size_t>> counts;
  for (const auto& v : ablation_presets(base)) {
    try {
      TrainConfig tc;
      tc.model = v.config;
      tc.loss = LossSpec::from_label("l1+ssim+ffl");
      tc.max_steps = 10;
      tc.epochs = 100;
      tc.val_fraction = 0.0;
      tc.seed = 5;
      const auto run = train_and_evaluate(tc, pairs, split);
      o.require(run.training.steps.size() == 10, v.name + " did not run 10 steps");
      o.require(run.report.rows.size() == split.test_all.size(), v.name + " report rows");
      counts.emplace_back(v.name, parameter_count(v.config));
      ++trained;
    } catch (const std::exception& e) {
      o.require(false, v.name + ": " + e.what());
    }
  }
  o.detail << "sizes {32,64} x L {2,3,4} shape-preserving; " << trained
           << "/5 ablation presets trained 10 steps and evaluated; params";
  for (const auto& [n, c] : counts) o.detail << ' ' << n << '=' << c;
  return o;
}

Outcome learning_signal() {
  Outcome o;
  const auto t0 = Clock::now();
  PhantomSpec ps;
  ps.size = 64;
  ps.artifact_rate = 0.5;
  const auto pool = generate_dataset(21, ps, 4, 6);
  // Eight pairs, artifact slices first so the weighted term is exercised.
  std::vector<std::size_t> idx;
  for (std::size_t pass = 0; pass < 2 && idx.size() < 8; ++pass) {
    for (std::size_t i = 0; i < pool.size() && idx.size() < 8; ++i) {
      if (pair_is_artifact(pool[i]) == (pass == 0)) idx.push_back(i);
    }
  }
  TrainConfig tc;
  tc.model.levels = 3;
  tc.model.base_channels = 8;
  tc.loss = LossSpec::from_label("l1+ssim+ffl");
  tc.lr0 = 2e-3;
  tc.lr_halve_every = 0;
  tc.augment = false;
  tc.val_fraction = 0.0;
  tc.epochs = 1000;
  tc.max_steps = 500;
  tc.seed = 3;
  const auto examples = make_examples(pool, idx, tc.loss);
  const auto result = train(tc, examples);
  const double first = result.steps.front().total;
  // Final loss: the full training set scored in one pass after the last step.
  double final_loss = 0.0;
  {
    std::vector<double> in, tgt, w;
    for (const auto& ex : examples) {
      in.insert(in.end(), ex.input.begin(), ex.input.end());
      tgt.insert(tgt.end(), ex.target.begin(), ex.target.end());
      const auto wm = make_weight_map(ex.mask, ex.is_artifact, tc.loss);
      w.insert(w.end(), wm.begin(), wm.end());
    }
    const std::size_t n = examples.front().size;
    const Shape shape{examples.size(), 1, n, n};
    NoGradGuard ng;
    const Tensor recon = result.model.forward(Tensor(shape, in), 0, Mode::Eval);
    final_loss = total_loss(recon, Tensor(shape, tgt), Tensor(shape, w), tc.loss).total.item();
  }
  const auto trained = evaluate_examples(result.model, examples);
  std::vector<std::vector<double>> inputs;
  for (const auto& ex : examples) inputs.push_back(ex.input);
  const auto baseline = evaluate_reconstructions(examples, inputs);
  const double secs = seconds_since(t0);
  o.detail << std::fixed << std::setprecision(4) << result.steps.size() << " steps, loss "
           << first << " -> " << final_loss << " (" << std::setprecision(1)
           << 100.0 * final_loss / first << "%), masked PSNR " << std::setprecision(2)
           << trained.all.psnr << " dB vs input baseline " << baseline.all.psnr << " dB, "
           << std::setprecision(1) << secs << " s";
  o.require(!result.diverged, "training diverged");
  o.require(final_loss < 0.1 * first, "final loss not below 10% of initial");
  o.require(trained.all.psnr >= baseline.all.psnr + 3.0, "PSNR gain below 3 dB");
  o.require(secs < 600.0, "runtime over 10 min");
  return o;
}

Outcome protocol_fidelity() {
  Outcome o;
  PhantomSpec ps;
  ps.size = 32;
  ps.artifact_rate = 0.3;
  const auto pairs = generate_dataset(5, ps, 1, 2);
  TrainConfig tc;
  tc.model.levels = 2;
  tc.model.base_channels = 4;
  tc.epochs = 45;
  tc.augment = false;
  tc.val_fraction = 0.0;
  tc.seed = 9;
  const auto result = train(tc, make_examples(pairs, all_indices(pairs.size()), tc.loss));
  bool lr_exact = result.epochs.size() == 45;
  for (const auto& e : result.epochs) {
    lr_exact = lr_exact && e.lr == 1e-4 * std::pow(0.5, static_cast<double>(e.epoch / 20));
  }
  o.require(lr_exact, "lr log differs from 1e-4 * 0.5^floor(e/20)");
  double max_clipped = 0.0;
  double max_raw = 0.0;
  for (const auto& s : result.steps) {
    max_clipped = std::max(max_clipped, s.clipped_norm);
    max_raw = std::max(max_raw, s.grad_norm);
  }
  o.require(max_clipped <= 1.0 + 1e-9, "post-clip gradient norm above 1");

  PhantomSpec tiny;
  tiny.size = 16;
  const auto many = generate_dataset(1, tiny, 12, 1);
  std::size_t overlaps = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto split = build_split(many, 0.7, seed);
    std::set<int> train(split.train_patients.begin(), split.train_patients.end());
    for (int p : split.test_patients) overlaps += train.count(p);
    for (auto i : split.test_all) overlaps += train.count(many[i].kvct.patient_id);
  }
  o.require(overlaps == 0, "patient overlap between train and test");

  std::mt19937_64 rng(2024);
  std::size_t flips = 0, affines = 0;
  const std::size_t draws = 10000;
  for (std::size_t i = 0; i < draws; ++i) {
    const auto p = sample_augment(rng);
    flips += p.flip;
    affines += p.affine;
  }
  const double pf = static_cast<double>(flips) / draws;
  const double pa = static_cast<double>(affines) / draws;
  o.require(pf >= 0.48 && pf <= 0.52, "flip frequency");
  o.require(pa >= 0.78 && pa <= 0.82, "affine frequency");

  auto fixture = [](Modality m, double hu) {
    SliceRecord s;
    s.modality = m;
    s.size = 4;
    s.hu.assign(16, 0.0);
    s.mask.assign(16, 1);
    s.hu[5] = hu;
    return classify_artifact(s);
  };
  const bool thresholds = !fixture(Modality::KVCT, 1999) && fixture(Modality::KVCT, 2001) &&
                          !fixture(Modality::MVCT, 999) && fixture(Modality::MVCT, 1001);
  o.require(thresholds, "HU classifier boundary fixtures");

  o.detail << std::fixed << "lr exact over " << result.epochs.size()
           << " epochs; max grad norm " << std::setprecision(3) << max_raw << " -> post-clip "
           << max_clipped << "; 100 splits overlap " << overlaps << "; flip " << pf
           << ", affine " << pa << "; thresholds " << (thresholds ? "ok" : "wrong");
  return o;
}

Outcome determinism() {
  Outcome o;
  PhantomSpec ps;
  ps.size = 32;
  const auto pairs = generate_dataset(8, ps, 2, 4);
  TrainConfig tc;
  tc.model.levels = 3;
  tc.model.base_channels = 4;
  tc.max_steps = 10;
  tc.batch_size = 2;
  tc.val_fraction = 0.0;
  tc.seed = 77;
  const auto examples = make_examples(pairs, all_indices(pairs.size()), tc.loss);
  const auto a = train(tc, examples);
  const auto b = train(tc, examples);
  bool same = a.steps.size() == 10 && b.steps.size() == 10;
  for (std::size_t i = 0; same && i < 10; ++i) same = a.steps[i].total == b.steps[i].total;
  o.require(same, "10-step loss sequences differ");

  const fs::path root = fs::temp_directory_path() / "remar_acceptance_determinism";
  fs::remove_all(root);
  const auto d1 = write_dataset(root / "a", generate_dataset(123, ps, 3, 3));
  const auto d2 = write_dataset(root / "b", generate_dataset(123, ps, 3, 3));
  bool bytes_same = d1.size() == d2.size();
  for (std::size_t i = 0; bytes_same && i < d1.size(); ++i) {
    bytes_same = sha256_file(d1[i]) == sha256_file(d2[i]);
  }
  fs::remove_all(root);
  o.require(bytes_same, "gen-data outputs differ");
  o.detail << "10-step losses bit-identical: " << (same ? "yes" : "no") << "; " << d1.size()
           << " dataset files byte-identical: " << (bytes_same ? "yes" : "no");
  return o;
}

Outcome grid_driver() {
  Outcome o;
  const auto t0 = Clock::now();
  GridSpec spec;
  spec.preset = "table1";
  spec.phantom.size = 64;
  spec.phantom.artifact_rate = 0.3;
  spec.patients = 6;
  spec.slices_per_patient = 6;
  spec.base.model.levels = 3;
  spec.base.model.base_channels = 8;
  spec.base.epochs = 2;
  spec.base.max_steps = 8;
  spec.base.seed = 4;
  const fs::path out = fs::temp_directory_path() / "remar_acceptance_grid";
  fs::remove_all(out);
  const auto grid = run_grid(spec, out);
  std::ostringstream table;
  grid.write_table(table);
  o.require(grid.rows.size() == 6, "expected 6 rows");
  for (const auto& r : grid.rows) o.require(r.error.empty(), r.name + ": " + r.error);
  const std::string header = table.str().substr(0, table.str().find('\n'));
  o.require(header == "preset,parameters,D_Art PSNR,D_Art SSIM,D_All PSNR,D_All SSIM,error",
            "table header");
  o.require(fs::exists(out / "table.csv"), "table.csv written");
  o.detail << "6 loss presets x {D_All, D_Art} trained and evaluated in " << std::fixed
           << std::setprecision(1) << seconds_since(t0) << " s; table:\n" << table.str();
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", gradient_correctness},
      {2, "oracle equivalence", oracle_equivalence},
      {3, "architecture invariants", architecture_invariants},
      {4, "learning signal (overfit)", learning_signal},
      {5, "protocol fidelity", protocol_fidelity},
      {6, "determinism", determinism},
      {7, "grid driver", grid_driver},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.passed = false;
      o.detail << "exception: " << e.what();
    }
    std::cout << "criterion " << c.id << " (" << c.name << "): " << (o.passed ? "PASS" : "FAIL")
              << " -- " << o.detail.str() << std::endl;
    failures += o.passed ? 0 : 1;
  }
  std::cout << (failures == 0 ? "all acceptance criteria passed"
                              : std::to_string(failures) + " acceptance criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}

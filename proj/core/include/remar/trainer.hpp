#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "remar/data.hpp"
#include "remar/keyvalue.hpp"
#include "remar/losses.hpp"
#include "remar/metrics.hpp"
#include "remar/network.hpp"

namespace remar {

enum class TrainSet { All, Art };
std::string to_string(TrainSet s);
TrainSet train_set_from_string(const std::string& s);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 4;
  double lr0 = 1e-4;
  // 0 keeps the learning rate constant.
  std::size_t lr_halve_every = 20;
  double weight_decay = 5e-4;
  double grad_clip_norm = 1.0;
  std::size_t early_stop_patience = 15;
  // Fraction of training patients held out for early stopping; 0 disables it.
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  bool augment = true;
  std::size_t variants_min = 2;
  std::size_t variants_max = 3;
  // Stop after this many optimizer steps; 0 means no limit.
  std::size_t max_steps = 0;
  LossSpec loss;
  ModelConfig model;
  TrainSet train_dataset = TrainSet::All;

  void validate() const;
  KeyValues to_map() const;
  /// Unknown keys are rejected. Keys prefixed "model." and "loss." set the
  /// nested configs; loss.terms takes a label such as "l1+ssim+ffl".
  static TrainConfig from_map(const KeyValues& kv);
};

/// lr0 * 0.5^floor(epoch / halve_every).
double lr_at_epoch(double lr0, std::size_t halve_every, std::size_t epoch);

struct AdamWState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// Decoupled weight decay: p -= lr*wd*p, then the bias-corrected Adam update.
/// Throws if any gradient is non-finite.
void adamw_step(ParameterStore& params, AdamWState& state, double lr, double weight_decay);

struct ClipResult {
  double norm = 0.0;    // global L2 norm before clipping
  double factor = 1.0;  // scale applied to every gradient
};
ClipResult clip_gradients(ParameterStore& params, double max_norm);
double global_grad_norm(const ParameterStore& params);

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double total = 0.0;
  std::vector<std::pair<std::string, double>> terms;
  double grad_norm = 0.0;
  double clipped_norm = 0.0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  std::optional<double> val_psnr;
};

struct TrainResult {
  ReMarNet model;
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  std::optional<double> best_val_psnr;
  bool diverged = false;
  std::string stop_reason;
};

/// Splits training examples by patient into (train, validation).
std::pair<std::vector<TrainingExample>, std::vector<TrainingExample>> hold_out_patients(
    const std::vector<TrainingExample>& examples, double fraction, std::uint64_t seed);

/// Optimizes a freshly initialized model on `train`. When `val` is non-empty
/// the epoch with the best validation masked PSNR is retained and training
/// stops after `early_stop_patience` epochs without improvement.
TrainResult train(const TrainConfig& config, const std::vector<TrainingExample>& train_set,
                  const std::vector<TrainingExample>& val_set = {});

/// Full protocol on a split: selects D_All or D_Art training slices, carves
/// the validation shard, trains, and evaluates on the test patients.
struct RunResult {
  TrainResult training;
  EvalReport report;
};
RunResult train_and_evaluate(const TrainConfig& config, const std::vector<SlicePair>& pairs,
                             const DatasetSplit& split);

void write_step_log(const std::filesystem::path& path, const std::vector<StepLog>& steps);
void write_lr_log(const std::filesystem::path& path, const std::vector<EpochLog>& epochs);

struct GridSpec {
  std::string preset = "table1";  // table1 | table2
  TrainConfig base;
  PhantomSpec phantom;
  std::size_t patients = 10;
  std::size_t slices_per_patient = 10;
  double train_fraction = 0.7;
};

/// One row of a Table-1/Table-2 shaped summary. D_Art columns come from the
/// model trained on D_Art^Tr scored on D_Art^Ts. D_All columns hold the
/// D_All^Tr model scored on D_Art^Ts and, in parentheses, on D_All^Ts.
struct GridRow {
  std::string name;
  std::size_t parameters = 0;
  Aggregate art_on_art;
  Aggregate all_on_art;
  Aggregate all_on_all;
  std::string error;
};

struct GridResult {
  std::vector<GridRow> rows;
  void write_table(std::ostream& out) const;
};

/// table1: six loss presets x {D_All, D_Art}; table2: five model variants
/// under the best D_Art loss. A failing preset is recorded and the grid continues.
GridResult run_grid(const GridSpec& spec, const std::filesystem::path& out_dir = {});

}  // namespace remar

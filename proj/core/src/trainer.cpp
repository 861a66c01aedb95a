#include "remar/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "remar/checkpoint.hpp"

namespace remar {

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string format_double(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw std::invalid_argument("config key '" + key + "': expected a non-negative integer, got '" +
                                v + "'");
  }
  return std::stoull(v);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config key '" + key + "': expected true/false, got '" + v + "'");
}

Tensor stack(const std::vector<const TrainingExample*>& batch,
             const std::vector<double> TrainingExample::*field) {
  const std::size_t n = batch.front()->size;
  std::vector<double> values;
  values.reserve(batch.size() * n * n);
  for (const auto* ex : batch) {
    const auto& f = ex->*field;
    values.insert(values.end(), f.begin(), f.end());
  }
  return Tensor({batch.size(), 1, n, n}, std::move(values));
}

double background_weight(const TrainingExample& ex, const LossSpec& loss) {
  return ex.is_artifact ? loss.w_outside : loss.w_clean;
}

}  // namespace

std::string to_string(TrainSet s) { return s == TrainSet::All ? "D_All" : "D_Art"; }

TrainSet train_set_from_string(const std::string& s) {
  if (s == "D_All" || s == "all") return TrainSet::All;
  if (s == "D_Art" || s == "art") return TrainSet::Art;
  throw std::invalid_argument("unknown training set '" + s + "' (expected D_All or D_Art)");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("train config: epochs must be >= 1");
  if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (!(lr0 > 0.0)) throw std::invalid_argument("train config: lr0 must be > 0");
  if (weight_decay < 0.0) throw std::invalid_argument("train config: weight_decay must be >= 0");
  if (!(grad_clip_norm > 0.0)) throw std::invalid_argument("train config: grad_clip_norm must be > 0");
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw std::invalid_argument("train config: val_fraction must be in [0, 1)");
  }
  if (variants_min == 0 || variants_max < variants_min) {
    throw std::invalid_argument("train config: need 1 <= variants_min <= variants_max");
  }
  loss.validate();
  model.validate();
}

KeyValues TrainConfig::to_map() const {
  KeyValues kv;
  kv["epochs"] = std::to_string(epochs);
  kv["batch_size"] = std::to_string(batch_size);
  kv["lr0"] = format_double(lr0);
  kv["lr_halve_every"] = std::to_string(lr_halve_every);
  kv["weight_decay"] = format_double(weight_decay);
  kv["grad_clip_norm"] = format_double(grad_clip_norm);
  kv["early_stop_patience"] = std::to_string(early_stop_patience);
  kv["val_fraction"] = format_double(val_fraction);
  kv["seed"] = std::to_string(seed);
  kv["augment"] = augment ? "true" : "false";
  kv["variants_min"] = std::to_string(variants_min);
  kv["variants_max"] = std::to_string(variants_max);
  kv["max_steps"] = std::to_string(max_steps);
  kv["train_dataset"] = to_string(train_dataset);
  kv["loss.terms"] = loss.label();
  kv["loss.w_inside"] = format_double(loss.w_inside);
  kv["loss.w_outside"] = format_double(loss.w_outside);
  kv["loss.w_clean"] = format_double(loss.w_clean);
  kv["loss.ffl_alpha"] = format_double(loss.ffl_alpha);
  kv["loss.ffl_beta"] = format_double(loss.ffl_beta);
  kv["loss.msssim_scales"] = std::to_string(loss.msssim_scales);
  for (const auto& [k, v] : model.to_map()) kv["model." + k] = v;
  return kv;
}

TrainConfig TrainConfig::from_map(const KeyValues& kv) {
  TrainConfig c;
  KeyValues model_kv;
  LossSpec terms = c.loss;
  for (const auto& [key, v] : kv) {
    if (key.rfind("model.", 0) == 0) {
      model_kv[key.substr(6)] = v;
    } else if (key == "epochs") {
      c.epochs = to_uint(key, v);
    } else if (key == "batch_size") {
      c.batch_size = to_uint(key, v);
    } else if (key == "lr0") {
      c.lr0 = to_double(key, v);
    } else if (key == "lr_halve_every") {
      c.lr_halve_every = to_uint(key, v);
    } else if (key == "weight_decay") {
      c.weight_decay = to_double(key, v);
    } else if (key == "grad_clip_norm") {
      c.grad_clip_norm = to_double(key, v);
    } else if (key == "early_stop_patience") {
      c.early_stop_patience = to_uint(key, v);
    } else if (key == "val_fraction") {
      c.val_fraction = to_double(key, v);
    } else if (key == "seed") {
      c.seed = to_uint(key, v);
    } else if (key == "augment") {
      c.augment = to_bool(key, v);
    } else if (key == "variants_min") {
      c.variants_min = to_uint(key, v);
    } else if (key == "variants_max") {
      c.variants_max = to_uint(key, v);
    } else if (key == "max_steps") {
      c.max_steps = to_uint(key, v);
    } else if (key == "train_dataset") {
      c.train_dataset = train_set_from_string(v);
    } else if (key == "loss.terms") {
      terms = LossSpec::from_label(v);
    } else if (key == "loss.w_inside") {
      c.loss.w_inside = to_double(key, v);
    } else if (key == "loss.w_outside") {
      c.loss.w_outside = to_double(key, v);
    } else if (key == "loss.w_clean") {
      c.loss.w_clean = to_double(key, v);
    } else if (key == "loss.ffl_alpha") {
      c.loss.ffl_alpha = to_double(key, v);
    } else if (key == "loss.ffl_beta") {
      c.loss.ffl_beta = to_double(key, v);
    } else if (key == "loss.msssim_scales") {
      c.loss.msssim_scales = to_uint(key, v);
    } else {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }
  c.loss.use_l1w = terms.use_l1w;
  c.loss.use_ssim = terms.use_ssim;
  c.loss.use_msssim = terms.use_msssim;
  c.loss.use_mse = terms.use_mse;
  c.loss.use_ffl = terms.use_ffl;
  c.model = ModelConfig::from_map(model_kv);
  c.validate();
  return c;
}

double lr_at_epoch(double lr0, std::size_t halve_every, std::size_t epoch) {
  if (halve_every == 0) return lr0;
  return lr0 * std::pow(0.5, static_cast<double>(epoch / halve_every));
}

void adamw_step(ParameterStore& params, AdamWState& state, double lr, double weight_decay) {
  auto& items = params.items();
  if (state.m.size() != items.size()) {
    state.m.assign(items.size(), {});
    state.v.assign(items.size(), {});
    for (std::size_t i = 0; i < items.size(); ++i) {
      state.m[i].assign(items[i].tensor.numel(), 0.0);
      state.v[i].assign(items[i].tensor.numel(), 0.0);
    }
  }
  for (const auto& p : items) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) {
        throw std::runtime_error("adamw_step: non-finite gradient in parameter '" + p.name + "'");
      }
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& p = items[i].tensor;
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      w[j] -= lr * weight_decay * w[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.eps);
    }
  }
}

double global_grad_norm(const ParameterStore& params) {
  double sq = 0.0;
  for (const auto& p : params.items()) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

ClipResult clip_gradients(ParameterStore& params, double max_norm) {
  ClipResult r;
  r.norm = global_grad_norm(params);
  if (r.norm > max_norm) {
    r.factor = max_norm / r.norm;
    for (auto& p : params.items()) {
      if (!p.tensor.has_grad()) continue;
      for (double& g : p.tensor.mutable_grad()) g *= r.factor;
    }
  }
  return r;
}

std::pair<std::vector<TrainingExample>, std::vector<TrainingExample>> hold_out_patients(
    const std::vector<TrainingExample>& examples, double fraction, std::uint64_t seed) {
  std::vector<int> patients;
  for (const auto& ex : examples) patients.push_back(ex.patient_id);
  std::sort(patients.begin(), patients.end());
  patients.erase(std::unique(patients.begin(), patients.end()), patients.end());
  if (fraction <= 0.0 || patients.size() < 2) return {examples, {}};
  std::mt19937_64 rng(mix(seed, 7));
  std::shuffle(patients.begin(), patients.end(), rng);
  const auto n = static_cast<long>(patients.size());
  const long n_val = std::clamp(std::lround(fraction * static_cast<double>(n)), 1L, n - 1);
  const std::set<int> val(patients.begin(), patients.begin() + n_val);
  std::vector<TrainingExample> tr, va;
  for (const auto& ex : examples) (val.count(ex.patient_id) ? va : tr).push_back(ex);
  return {tr, va};
}

TrainResult train(const TrainConfig& config, const std::vector<TrainingExample>& train_set,
                  const std::vector<TrainingExample>& val_set) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: no training slices");
  const std::size_t size = train_set.front().size;
  for (const auto& ex : train_set) {
    if (ex.size != size) throw std::invalid_argument("train: slices differ in size");
  }
  config.model.check_input(size, size);

  // Weight maps follow the configured loss, whatever the examples carried.
  std::vector<TrainingExample> base = train_set;
  for (auto& ex : base) ex.weights = make_weight_map(ex.mask, ex.is_artifact, config.loss);

  TrainResult result{ReMarNet(config.model, config.seed), {}, {}, 0, std::nullopt, false, {}};
  ReMarNet& model = result.model;
  AdamWState opt;
  std::mt19937_64 order_rng(mix(config.seed, 1));
  std::mt19937_64 aug_rng(mix(config.seed, 2));
  ReMarNet::State best_state = model.state();
  ReMarNet::State last_good = best_state;
  std::size_t since_best = 0;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at_epoch(config.lr0, config.lr_halve_every, epoch);
    std::vector<TrainingExample> items;
    for (const auto& ex : base) {
      if (!config.augment) {
        items.push_back(ex);
        continue;
      }
      const std::size_t span = config.variants_max - config.variants_min + 1;
      const std::size_t k = config.variants_min + static_cast<std::size_t>(aug_rng() % span);
      for (std::size_t j = 0; j < k; ++j) {
        items.push_back(augment(ex, sample_augment(aug_rng), background_weight(ex, config.loss)));
      }
    }
    std::shuffle(items.begin(), items.end(), order_rng);

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    bool stop = false;
    for (std::size_t start = 0; start < items.size() && !stop; start += config.batch_size) {
      std::vector<const TrainingExample*> batch;
      for (std::size_t i = start; i < std::min(items.size(), start + config.batch_size); ++i) {
        batch.push_back(&items[i]);
      }
      const Tensor x = stack(batch, &TrainingExample::input);
      const Tensor y = stack(batch, &TrainingExample::target);
      const Tensor w = stack(batch, &TrainingExample::weights);

      StepLog log;
      log.step = step;
      log.epoch = epoch;
      log.lr = lr;
      bool finite = true;
      try {
        const Tensor recon = model.forward(x, mix(config.seed, 1000 + step), Mode::Train);
        const auto loss = total_loss(recon, y, w, config.loss);
        log.total = loss.total.item();
        for (const auto& t : loss.terms) log.terms.emplace_back(t.name, t.value.item());
        finite = std::isfinite(log.total);
        if (finite) {
          model.parameters().zero_grad();
          loss.total.backward();
          const auto clip = clip_gradients(model.parameters(), config.grad_clip_norm);
          log.grad_norm = clip.norm;
          log.clipped_norm = global_grad_norm(model.parameters());
          finite = std::isfinite(clip.norm);
          if (finite) adamw_step(model.parameters(), opt, lr, config.weight_decay);
        }
      } catch (const std::runtime_error& e) {
        finite = false;
        result.stop_reason = e.what();
      }
      if (!finite) {
        model.load_state(val_set.empty() ? last_good : best_state);
        result.diverged = true;
        if (result.stop_reason.empty()) {
          result.stop_reason = "non-finite loss at step " + std::to_string(step);
        }
        return result;
      }
      loss_sum += log.total;
      ++loss_count;
      result.steps.push_back(std::move(log));
      ++step;
      if (config.max_steps && step >= config.max_steps) stop = true;
    }

    EpochLog elog;
    elog.epoch = epoch;
    elog.lr = lr;
    elog.mean_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    last_good = model.state();
    if (!val_set.empty()) {
      const double psnr = evaluate_examples(model, val_set).all.psnr;
      elog.val_psnr = psnr;
      if (!result.best_val_psnr || psnr > *result.best_val_psnr) {
        result.best_val_psnr = psnr;
        result.best_epoch = epoch;
        best_state = last_good;
        since_best = 0;
      } else if (++since_best >= config.early_stop_patience) {
        result.epochs.push_back(elog);
        result.stop_reason = "early stopping at epoch " + std::to_string(epoch);
        break;
      }
    } else {
      result.best_epoch = epoch;
    }
    result.epochs.push_back(elog);
    if (stop) {
      result.stop_reason = "reached max_steps";
      break;
    }
  }
  if (result.stop_reason.empty()) result.stop_reason = "completed all epochs";
  if (!val_set.empty()) model.load_state(best_state);
  return result;
}

RunResult train_and_evaluate(const TrainConfig& config, const std::vector<SlicePair>& pairs,
                             const DatasetSplit& split) {
  const auto& indices = config.train_dataset == TrainSet::All ? split.train_all : split.train_art;
  if (indices.empty()) {
    throw std::invalid_argument("training set " + to_string(config.train_dataset) +
                                " has no slices");
  }
  const auto examples = make_examples(pairs, indices, config.loss);
  auto [tr, va] = hold_out_patients(examples, config.val_fraction, config.seed);
  RunResult r{train(config, tr, va), {}};
  r.report = evaluate_split(r.training.model, pairs, split);
  return r;
}

void write_step_log(const std::filesystem::path& path, const std::vector<StepLog>& steps) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,epoch,term,value\n" << std::setprecision(17);
  for (const auto& s : steps) {
    for (const auto& [name, v] : s.terms) {
      out << s.step << ',' << s.epoch << ',' << name << ',' << v << '\n';
    }
    out << s.step << ',' << s.epoch << ",total," << s.total << '\n';
    out << s.step << ',' << s.epoch << ",grad_norm," << s.grad_norm << '\n';
    out << s.step << ',' << s.epoch << ",clipped_grad_norm," << s.clipped_norm << '\n';
  }
}

void write_lr_log(const std::filesystem::path& path, const std::vector<EpochLog>& epochs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,lr,mean_loss,val_psnr\n" << std::setprecision(17);
  for (const auto& e : epochs) {
    out << e.epoch << ',' << e.lr << ',' << e.mean_loss << ',';
    if (e.val_psnr) out << *e.val_psnr;
    out << '\n';
  }
}

void GridResult::write_table(std::ostream& out) const {
  out << "preset,parameters,D_Art PSNR,D_Art SSIM,D_All PSNR,D_All SSIM,error\n";
  out << std::fixed;
  for (const auto& r : rows) {
    out << r.name << ',' << r.parameters << ',';
    if (r.error.empty()) {
      out << std::setprecision(3) << r.art_on_art.psnr << ',' << r.art_on_art.ssim << ','
          << r.all_on_art.psnr << " (" << r.all_on_all.psnr << ")," << r.all_on_art.ssim << " ("
          << r.all_on_all.ssim << "),";
    } else {
      out << ",,,,\"" << r.error << '"';
    }
    out << '\n';
  }
  out << std::defaultfloat;
}

namespace {

void save_run(const std::filesystem::path& dir, const RunResult& run) {
  std::filesystem::create_directories(dir);
  write_step_log(dir / "steps.csv", run.training.steps);
  write_lr_log(dir / "lr.csv", run.training.epochs);
  save_checkpoint(dir / "model.ckpt", run.training.model);
  std::ofstream eval(dir / "eval.csv");
  run.report.write_csv(eval);
  std::ofstream summary(dir / "summary.csv");
  run.report.write_summary(summary);
}

std::string dir_name(const std::string& name) {
  std::string out;
  for (char c : name) out += (c == '+') ? 'p' : c;
  return out;
}

}  // namespace

GridResult run_grid(const GridSpec& spec, const std::filesystem::path& out_dir) {
  struct Preset {
    std::string name;
    TrainConfig config;
  };
  std::vector<Preset> presets;
  if (spec.preset == "table1") {
    for (const auto& loss : table1_loss_presets()) {
      TrainConfig c = spec.base;
      c.loss.use_l1w = loss.use_l1w;
      c.loss.use_ssim = loss.use_ssim;
      c.loss.use_msssim = loss.use_msssim;
      c.loss.use_mse = loss.use_mse;
      c.loss.use_ffl = loss.use_ffl;
      presets.push_back({loss.label(), c});
    }
  } else if (spec.preset == "table2") {
    for (const auto& v : ablation_presets(spec.base.model)) {
      TrainConfig c = spec.base;
      c.model = v.config;
      c.loss = LossSpec::from_label("l1+ssim+ffl");
      presets.push_back({v.name, c});
    }
  } else {
    throw std::invalid_argument("unknown grid preset '" + spec.preset + "' (table1|table2)");
  }

  const auto pairs =
      generate_dataset(spec.base.seed, spec.phantom, spec.patients, spec.slices_per_patient);
  const auto split = build_split(pairs, spec.train_fraction, spec.base.seed);

  GridResult grid;
  for (const auto& p : presets) {
    GridRow row;
    row.name = p.name;
    try {
      row.parameters = parameter_count(p.config.model);
      TrainConfig c_art = p.config;
      c_art.train_dataset = TrainSet::Art;
      TrainConfig c_all = p.config;
      c_all.train_dataset = TrainSet::All;
      const auto art = train_and_evaluate(c_art, pairs, split);
      const auto all = train_and_evaluate(c_all, pairs, split);
      row.art_on_art = art.report.art;
      row.all_on_art = all.report.art;
      row.all_on_all = all.report.all;
      if (!out_dir.empty()) {
        save_run(out_dir / dir_name(p.name) / "D_Art", art);
        save_run(out_dir / dir_name(p.name) / "D_All", all);
      }
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    grid.rows.push_back(row);
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream table(out_dir / "table.csv");
    grid.write_table(table);
  }
  return grid;
}

}  // namespace remar

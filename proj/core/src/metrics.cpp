#include "remar/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <stdexcept>

#include "remar/losses.hpp"

namespace remar {

namespace {

void check_inputs(const char* op, std::size_t n_recon, std::size_t n_target, std::size_t n_mask) {
  if (n_recon != n_target || n_recon != n_mask) {
    throw std::invalid_argument(std::string(op) + ": recon, target and mask sizes differ (" +
                                std::to_string(n_recon) + ", " + std::to_string(n_target) +
                                ", " + std::to_string(n_mask) + ")");
  }
}

void accumulate(Aggregate& a, const SliceEval& e) {
  a.psnr += e.psnr;
  a.ssim += e.ssim;
  ++a.count;
}

void finish(Aggregate& a) {
  if (a.count == 0) return;
  a.psnr /= static_cast<double>(a.count);
  a.ssim /= static_cast<double>(a.count);
}

}  // namespace

PsnrValue masked_psnr(std::span<const double> recon, std::span<const double> target,
                      std::span<const std::uint8_t> mask, double data_range) {
  check_inputs("masked_psnr", recon.size(), target.size(), mask.size());
  if (data_range <= 0.0) throw std::invalid_argument("masked_psnr: data_range must be > 0");
  double sse = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < recon.size(); ++i) {
    if (!mask[i]) continue;
    const double d = recon[i] - target[i];
    sse += d * d;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("masked_psnr: mask is empty");
  const double mse = sse / static_cast<double>(n);
  if (mse == 0.0) return {kPsnrCapDb, true};
  const double db = 10.0 * std::log10(data_range * data_range / mse);
  if (db >= kPsnrCapDb) return {kPsnrCapDb, true};
  return {db, false};
}

double masked_ssim(std::span<const double> recon, std::span<const double> target,
                   std::span<const std::uint8_t> mask, std::size_t height, std::size_t width,
                   const SsimOptions& opts) {
  check_inputs("masked_ssim", recon.size(), target.size(), mask.size());
  if (recon.size() != height * width) {
    throw std::invalid_argument("masked_ssim: image is not " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
  const auto maps = ssim_maps(recon, target, height, width, opts);
  const std::size_t half = opts.window / 2;
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < maps.height; ++i) {
    for (std::size_t j = 0; j < maps.width; ++j) {
      if (!mask[(i + half) * width + j + half]) continue;
      total += maps.ssim[i * maps.width + j];
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("masked_ssim: no window center inside the mask");
  return total / static_cast<double>(n);
}

void EvalReport::write_csv(std::ostream& out) const {
  out << "patient,slice,is_artifact,psnr_db,psnr_capped,psnr_hu_db,ssim\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.patient_id << ',' << r.slice_index << ',' << (r.is_artifact ? 1 : 0) << ','
        << r.psnr << ',' << (r.psnr_capped ? 1 : 0) << ',' << r.psnr_hu << ',' << r.ssim << '\n';
  }
}

void EvalReport::write_summary(std::ostream& out) const {
  out << std::fixed << std::setprecision(3);
  out << "subset,slices,psnr_db,ssim\n";
  out << "D_Art," << art.count << ',' << art.psnr << ',' << art.ssim << '\n';
  out << "D_All," << all.count << ',' << all.psnr << ',' << all.ssim << '\n';
  for (const auto& [pid, a] : per_patient) {
    out << "patient_" << pid << ',' << a.count << ',' << a.psnr << ',' << a.ssim << '\n';
  }
  out << std::defaultfloat;
}

EvalReport evaluate_reconstructions(const std::vector<TrainingExample>& examples,
                                    const std::vector<std::vector<double>>& recons) {
  if (examples.empty()) throw std::invalid_argument("evaluate: no slices to evaluate");
  if (examples.size() != recons.size()) {
    throw std::invalid_argument("evaluate: reconstruction count differs from slice count");
  }
  EvalReport report;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    SliceEval e;
    e.patient_id = ex.patient_id;
    e.slice_index = ex.slice_index;
    e.is_artifact = ex.is_artifact;
    const auto p = masked_psnr(recons[i], ex.target, ex.mask, 2.0);
    e.psnr = p.db;
    e.psnr_capped = p.capped;
    e.psnr_hu = masked_psnr(denormalize_hu(recons[i]), denormalize_hu(ex.target), ex.mask, 2000.0).db;
    e.ssim = masked_ssim(recons[i], ex.target, ex.mask, ex.size, ex.size);
    report.rows.push_back(e);
  }
  std::sort(report.rows.begin(), report.rows.end(), [](const SliceEval& a, const SliceEval& b) {
    return std::pair(a.patient_id, a.slice_index) < std::pair(b.patient_id, b.slice_index);
  });
  for (const auto& e : report.rows) {
    accumulate(report.all, e);
    if (e.is_artifact) accumulate(report.art, e);
    accumulate(report.per_patient[e.patient_id], e);
  }
  finish(report.all);
  finish(report.art);
  for (auto& [pid, a] : report.per_patient) finish(a);
  return report;
}

std::vector<double> reconstruct(const ReMarNet& model, const TrainingExample& example) {
  const std::size_t n = example.size;
  model.config().check_input(n, n);
  NoGradGuard no_grad;
  Tensor x({1, 1, n, n}, example.input);
  const Tensor y = model.forward(x, 0, Mode::Eval);
  return {y.data().begin(), y.data().end()};
}

EvalReport evaluate_examples(const ReMarNet& model, const std::vector<TrainingExample>& examples) {
  std::vector<std::vector<double>> recons;
  recons.reserve(examples.size());
  for (const auto& ex : examples) recons.push_back(reconstruct(model, ex));
  return evaluate_reconstructions(examples, recons);
}

EvalReport evaluate_split(const ReMarNet& model, const std::vector<SlicePair>& pairs,
                          const DatasetSplit& split) {
  if (split.test_all.empty()) throw std::invalid_argument("evaluate_split: empty test split");
  return evaluate_examples(model, make_examples(pairs, split.test_all, LossSpec{}));
}

}  // namespace remar

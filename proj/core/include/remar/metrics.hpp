#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "remar/data.hpp"
#include "remar/network.hpp"
#include "remar/ssim.hpp"

namespace remar {

inline constexpr double kPsnrCapDb = 100.0;

struct PsnrValue {
  double db = 0.0;
  bool capped = false;
};

/// PSNR over mask=1 pixels only. Zero error reports kPsnrCapDb with the flag set.
PsnrValue masked_psnr(std::span<const double> recon, std::span<const double> target,
                      std::span<const std::uint8_t> mask, double data_range = 2.0);

/// Mean SSIM over valid windows whose center pixel lies inside the mask.
double masked_ssim(std::span<const double> recon, std::span<const double> target,
                   std::span<const std::uint8_t> mask, std::size_t height, std::size_t width,
                   const SsimOptions& opts = {});

struct SliceEval {
  int patient_id = 0;
  int slice_index = 0;
  bool is_artifact = false;
  double psnr = 0.0;
  bool psnr_capped = false;
  double psnr_hu = 0.0;  // over the [-1000, 1000] HU window, range 2000
  double ssim = 0.0;
};

struct Aggregate {
  std::size_t count = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EvalReport {
  std::vector<SliceEval> rows;  // sorted by (patient, slice)
  Aggregate art;
  Aggregate all;
  std::map<int, Aggregate> per_patient;

  void write_csv(std::ostream& out) const;
  void write_summary(std::ostream& out) const;
};

/// Scores precomputed reconstructions (normalized space) against examples.
EvalReport evaluate_reconstructions(const std::vector<TrainingExample>& examples,
                                    const std::vector<std::vector<double>>& recons);

/// Eval-mode forward of every example, one slice at a time.
std::vector<double> reconstruct(const ReMarNet& model, const TrainingExample& example);
EvalReport evaluate_examples(const ReMarNet& model, const std::vector<TrainingExample>& examples);

/// Evaluates the test patients of `split` (D_All^Ts, with D_Art^Ts flagged).
EvalReport evaluate_split(const ReMarNet& model, const std::vector<SlicePair>& pairs,
                          const DatasetSplit& split);

}  // namespace remar

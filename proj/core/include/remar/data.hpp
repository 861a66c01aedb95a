#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace remar {

enum class Region { Head, Neck, Torso };
enum class Modality { KVCT, MVCT };

std::string to_string(Region r);
std::string to_string(Modality m);
Region region_from_string(const std::string& s);
Modality modality_from_string(const std::string& s);

inline constexpr double kKvctArtifactThresholdHu = 2000.0;
inline constexpr double kMvctArtifactThresholdHu = 1000.0;
inline constexpr double kMinHu = -1024.0;
inline constexpr double kMaxHu = 4000.0;

/// One square 2D CT slice in Hounsfield units with its body mask.
struct SliceRecord {
  int patient_id = 0;
  int slice_index = 0;
  Region region = Region::Head;
  Modality modality = Modality::KVCT;
  std::size_t size = 0;
  std::vector<double> hu;
  std::vector<std::uint8_t> mask;
};

/// Pixel-aligned kVCT/MVCT slices generated from one shared anatomy.
/// kvct.hu == anatomy + artifact exactly, and artifact is zero wherever
/// artifact_support is zero.
struct SlicePair {
  SliceRecord kvct;
  SliceRecord mvct;
  std::vector<double> anatomy;
  std::vector<double> artifact;
  std::vector<std::uint8_t> artifact_support;
  std::size_t insert_count = 0;
};

/// Metal insert in normalized image coordinates ([-1, 1] on both axes,
/// y pointing down the image rows).
struct MetalInsert {
  double x = 0.0;
  double y = 0.0;
  double radius = 0.05;
  double hu = 3200.0;
};

/// Streaks are radial bright/dark fans centered on each insert with an
/// exponential radial decay.
struct StreakModel {
  std::size_t count = 8;
  double amplitude = 450.0;
  // Decay length and angular half-width in normalized units / radians.
  double decay = 0.45;
  double angular_width = 0.05;
  // |A| below this many HU is truncated to zero, bounding the support.
  double cutoff = 1.0;
};

/// MVCT appearance relative to the kVCT anatomy.
struct ModalityTransform {
  // Positive HU are scaled by this factor; negative HU are kept.
  double contrast = 0.8;
  double smoothing_sigma = 0.8;
  double artifact_attenuation = 0.2;
};

struct PhantomSpec {
  std::size_t size = 64;
  // Expected fraction of slices carrying metal inserts.
  double artifact_rate = 0.15;
  std::size_t max_inserts = 2;
  double insert_hu = 3200.0;
  double insert_radius = 0.05;
  // When non-empty, exactly these inserts are placed on every slice.
  std::vector<MetalInsert> fixed_inserts;
  StreakModel streaks;
  ModalityTransform mvct;

  void validate() const;
};

/// Deterministic per seed. Slices run head first, then neck.
std::vector<SlicePair> generate_patient(std::uint64_t seed, const PhantomSpec& spec,
                                        std::size_t n_slices, int patient_id = 0);

/// Patients 0..n-1 with independent sub-seeds, merged in patient order.
std::vector<SlicePair> generate_dataset(std::uint64_t seed, const PhantomSpec& spec,
                                        std::size_t patients, std::size_t slices_per_patient);

/// Max HU inside the body mask above the modality threshold.
bool classify_artifact(const SliceRecord& slice);
/// A pair is artifact-contaminated when either modality triggers.
bool pair_is_artifact(const SlicePair& pair);

/// Patient-wise train/test partition with artifact-subset membership.
/// Slice lists hold indices into the pair vector the split was built from.
struct DatasetSplit {
  std::vector<int> train_patients;
  std::vector<int> test_patients;
  std::vector<std::size_t> train_all, train_art, test_all, test_art;
  std::vector<bool> is_artifact;
  double artifact_fraction = 0.0;
};

DatasetSplit build_split(const std::vector<SlicePair>& pairs, double train_fraction,
                         std::uint64_t seed);

/// Linear map of the [-1000, 1000] HU window onto [-1, 1], clamping outside.
double normalize_hu(double hu);
double denormalize_hu(double value);
std::vector<double> normalize_hu(std::span<const double> hu);
std::vector<double> denormalize_hu(std::span<const double> values);

/// A network-ready pair in normalized intensity space.
struct TrainingExample {
  int patient_id = 0;
  int slice_index = 0;
  bool is_artifact = false;
  std::size_t size = 0;
  std::vector<double> input;   // normalized kVCT
  std::vector<double> target;  // normalized MVCT
  std::vector<std::uint8_t> mask;
  std::vector<double> weights;
};

struct LossSpec;
TrainingExample make_example(const SlicePair& pair, const LossSpec& loss);
std::vector<TrainingExample> make_examples(const std::vector<SlicePair>& pairs,
                                           const std::vector<std::size_t>& indices,
                                           const LossSpec& loss);

struct AugmentConfig {
  double flip_probability = 0.5;
  double affine_probability = 0.8;
  double shift_limit = 0.0625;  // fraction of image size
  double scale_limit = 0.1;
  double rotate_limit_deg = 5.0;
};

struct AugmentParams {
  bool flip = false;
  bool affine = false;
  double shift_x = 0.0;  // fraction of image size
  double shift_y = 0.0;
  double scale = 1.0;
  double rotate_deg = 0.0;

  bool is_identity() const { return !flip && !affine; }
};

AugmentParams sample_augment(std::mt19937_64& rng, const AugmentConfig& cfg = {});
AugmentParams sample_augment(std::uint64_t seed, const AugmentConfig& cfg = {});

enum class Interpolation { Nearest, Bilinear };

/// Horizontal flip (if set) followed by the affine map about the image center.
std::vector<double> warp_image(std::span<const double> image, std::size_t size,
                               const AugmentParams& params, Interpolation interp, double fill);

/// Same transform on input, target (bilinear), mask and weights (nearest).
TrainingExample augment(const TrainingExample& example, const AugmentParams& params,
                        double background_weight);

/// Writes one directory per patient plus manifest.csv. Each slice file is a
/// [2,H,W] tensor record: plane 0 holds HU, plane 1 the body mask.
/// Returns the written paths in manifest order.
std::vector<std::filesystem::path> write_dataset(const std::filesystem::path& dir,
                                                 const std::vector<SlicePair>& pairs);

/// Reads a directory written by write_dataset. Artifact maps are not stored,
/// so the returned pairs carry empty anatomy/artifact fields.
std::vector<SlicePair> read_dataset(const std::filesystem::path& dir);

/// Loads a slice file ([2,H,W] with mask, or [H,W] HU only with a full mask).
SliceRecord load_slice(const std::filesystem::path& path);
void save_slice(const std::filesystem::path& path, const SliceRecord& slice);

}  // namespace remar

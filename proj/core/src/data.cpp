#include "remar/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "remar/losses.hpp"
#include "remar/serialize.hpp"

namespace remar {

std::string to_string(Region r) {
  switch (r) {
    case Region::Head:
      return "head";
    case Region::Neck:
      return "neck";
    case Region::Torso:
      return "torso";
  }
  return "?";
}

std::string to_string(Modality m) { return m == Modality::KVCT ? "kVCT" : "MVCT"; }

Region region_from_string(const std::string& s) {
  if (s == "head") return Region::Head;
  if (s == "neck") return Region::Neck;
  if (s == "torso") return Region::Torso;
  throw std::invalid_argument("unknown region '" + s + "'");
}

Modality modality_from_string(const std::string& s) {
  if (s == "kVCT") return Modality::KVCT;
  if (s == "MVCT") return Modality::MVCT;
  throw std::invalid_argument("unknown modality '" + s + "'");
}

void PhantomSpec::validate() const {
  if (size < 16) throw std::invalid_argument("phantom spec: size must be >= 16");
  if (artifact_rate < 0.0 || artifact_rate > 1.0) {
    throw std::invalid_argument("phantom spec: artifact_rate must be in [0, 1]");
  }
  if (max_inserts > 2) throw std::invalid_argument("phantom spec: at most 2 metal inserts");
  if (fixed_inserts.size() > 2) throw std::invalid_argument("phantom spec: at most 2 metal inserts");
  if (insert_hu < 3000.0) throw std::invalid_argument("phantom spec: insert_hu must be >= 3000");
  for (const auto& ins : fixed_inserts) {
    if (ins.hu < 3000.0) throw std::invalid_argument("phantom spec: insert HU must be >= 3000");
    if (ins.radius <= 0.0) throw std::invalid_argument("phantom spec: insert radius must be > 0");
  }
  if (streaks.decay <= 0.0 || streaks.angular_width <= 0.0) {
    throw std::invalid_argument("phantom spec: streak decay and width must be > 0");
  }
  if (mvct.smoothing_sigma < 0.0) {
    throw std::invalid_argument("phantom spec: smoothing sigma must be >= 0");
  }
}

namespace {

struct Ellipse {
  double cx, cy, ax, ay, angle, hu;

  bool contains(double x, double y) const {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double u = (x - cx) * c + (y - cy) * s;
    const double v = -(x - cx) * s + (y - cy) * c;
    return (u * u) / (ax * ax) + (v * v) / (ay * ay) <= 1.0;
  }
};

// Patient-level anatomy parameters, drawn once per patient.
struct PatientShape {
  double scale, skull_hu, skull_thickness, brain_hu, tissue_hu, muscle_hu, vertebra_hu, tilt;
};

PatientShape draw_patient(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PatientShape p;
  p.scale = 0.9 + 0.15 * u(rng);
  p.skull_hu = 900.0 + 300.0 * u(rng);
  p.skull_thickness = 0.06 + 0.03 * u(rng);
  p.brain_hu = 25.0 + 15.0 * u(rng);
  p.tissue_hu = 30.0 + 30.0 * u(rng);
  p.muscle_hu = 45.0 + 20.0 * u(rng);
  p.vertebra_hu = 600.0 + 300.0 * u(rng);
  p.tilt = (u(rng) - 0.5) * 0.2;
  return p;
}

// The first ellipse is the body outline; later ellipses overwrite earlier ones.
std::vector<Ellipse> slice_anatomy(const PatientShape& p, Region region, double t) {
  const double s = p.scale;
  std::vector<Ellipse> e;
  if (region == Region::Head) {
    const double ax = 0.70 * s * (1.0 - 0.1 * std::abs(t - 0.5));
    const double ay = 0.82 * s * (1.0 - 0.1 * std::abs(t - 0.5));
    e.push_back({0.0, 0.0, ax, ay, p.tilt, p.tissue_hu});
    if (t < 0.5) {
      // Cranial level: skull ring around brain, paired sinus air cells.
      e.push_back({0.0, 0.0, ax - 0.03, ay - 0.03, p.tilt, p.skull_hu});
      e.push_back({0.0, 0.0, ax - 0.03 - p.skull_thickness, ay - 0.03 - p.skull_thickness,
                   p.tilt, p.brain_hu});
      e.push_back({-0.18 * s, -0.45 * s, 0.08 * s, 0.06 * s, 0.3, -900.0});
      e.push_back({0.18 * s, -0.45 * s, 0.08 * s, 0.06 * s, -0.3, -900.0});
    } else {
      // Dental level: mandible arc, tongue, airway.
      e.push_back({0.0, -0.05 * s, 0.52 * ax, 0.62 * ay, p.tilt, p.skull_hu});
      e.push_back({0.0, -0.02 * s, 0.52 * ax - 0.07, 0.62 * ay - 0.07, p.tilt, p.muscle_hu});
      e.push_back({0.0, 0.3 * s, 0.1 * s, 0.07 * s, 0.0, -950.0});
      e.push_back({0.0, 0.62 * ay, 0.12 * s, 0.08 * s, 0.0, p.vertebra_hu});
    }
  } else {
    const double ax = 0.58 * s;
    const double ay = 0.48 * s;
    e.push_back({0.0, 0.0, ax, ay, p.tilt, p.tissue_hu});
    e.push_back({-0.3 * s, -0.05, 0.12 * s, 0.2 * s, 0.5, p.muscle_hu});
    e.push_back({0.3 * s, -0.05, 0.12 * s, 0.2 * s, -0.5, p.muscle_hu});
    e.push_back({0.0, 0.2 * s, 0.13 * s, 0.11 * s, 0.0, p.vertebra_hu});
    e.push_back({0.0, 0.22 * s, 0.045 * s, 0.04 * s, 0.0, 20.0});
    e.push_back({0.0, -0.22 * s, 0.07 * s, 0.06 * s, 0.0, -950.0});
  }
  return e;
}

double coord(std::size_t i, std::size_t size) {
  return (static_cast<double>(i) + 0.5) / static_cast<double>(size) * 2.0 - 1.0;
}

std::vector<double> gaussian_smooth(const std::vector<double>& img, std::size_t n, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    taps[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += taps[i + radius];
  }
  for (auto& t : taps) t /= total;
  const int ni = static_cast<int>(n);
  auto clampi = [ni](int v) { return std::clamp(v, 0, ni - 1); };
  std::vector<double> tmp(n * n), out(n * n);
  for (int y = 0; y < ni; ++y) {
    for (int x = 0; x < ni; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += taps[k + radius] * img[y * ni + clampi(x + k)];
      tmp[y * ni + x] = acc;
    }
  }
  for (int y = 0; y < ni; ++y) {
    for (int x = 0; x < ni; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += taps[k + radius] * tmp[clampi(y + k) * ni + x];
      out[y * ni + x] = acc;
    }
  }
  return out;
}

// Pulls a random insert toward the body center until it sits inside the body.
MetalInsert place_inside(MetalInsert ins, const Ellipse& body) {
  for (int i = 0; i < 50 && !body.contains(ins.x, ins.y); ++i) {
    ins.x *= 0.9;
    ins.y *= 0.9;
  }
  return ins;
}

bool insert_inside_body(const MetalInsert& ins, const Ellipse& body) {
  for (int k = 0; k < 16; ++k) {
    const double a = 2.0 * std::numbers::pi * k / 16.0;
    if (!body.contains(ins.x + ins.radius * std::cos(a), ins.y + ins.radius * std::sin(a))) {
      return false;
    }
  }
  return body.contains(ins.x, ins.y);
}

SlicePair render_slice(const PhantomSpec& spec, const PatientShape& shape, Region region,
                       double t, const std::vector<MetalInsert>& inserts, double streak_phase,
                       int patient_id, int slice_index) {
  const std::size_t n = spec.size;
  const auto ellipses = slice_anatomy(shape, region, t);
  const Ellipse& body = ellipses.front();

  SlicePair pair;
  pair.anatomy.assign(n * n, -1000.0);
  std::vector<std::uint8_t> mask(n * n, 0);
  for (std::size_t iy = 0; iy < n; ++iy) {
    for (std::size_t ix = 0; ix < n; ++ix) {
      const double x = coord(ix, n);
      const double y = coord(iy, n);
      for (const auto& e : ellipses) {
        if (e.contains(x, y)) pair.anatomy[iy * n + ix] = e.hu;
      }
      mask[iy * n + ix] = body.contains(x, y) ? 1 : 0;
    }
  }

  pair.artifact.assign(n * n, 0.0);
  pair.artifact_support.assign(n * n, 0);
  pair.insert_count = inserts.size();
  const auto& sm = spec.streaks;
  for (std::size_t iy = 0; iy < n; ++iy) {
    for (std::size_t ix = 0; ix < n; ++ix) {
      const std::size_t i = iy * n + ix;
      const double x = coord(ix, n);
      const double y = coord(iy, n);
      double streak = 0.0;
      bool in_metal = false;
      double metal_hu = 0.0;
      for (const auto& ins : inserts) {
        const double dx = x - ins.x;
        const double dy = y - ins.y;
        const double r = std::hypot(dx, dy);
        if (r <= ins.radius) {
          in_metal = true;
          metal_hu = std::max(metal_hu, ins.hu);
          continue;
        }
        const double theta = std::atan2(dy, dx);
        const double radial = std::exp(-(r - ins.radius) / sm.decay);
        for (std::size_t j = 0; j < sm.count; ++j) {
          const double line =
              streak_phase + std::numbers::pi * static_cast<double>(j) / static_cast<double>(sm.count);
          double d = std::remainder(theta - line, std::numbers::pi);
          const double sign = (j % 2 == 0) ? 1.0 : -1.0;
          streak += sign * sm.amplitude * radial *
                    std::exp(-0.5 * d * d / (sm.angular_width * sm.angular_width));
        }
      }
      double a = 0.0;
      if (in_metal) {
        a = metal_hu - pair.anatomy[i];
      } else if (std::abs(streak) >= sm.cutoff) {
        a = streak;
      }
      if (a != 0.0) {
        a = std::clamp(pair.anatomy[i] + a, kMinHu, kMaxHu) - pair.anatomy[i];
      }
      pair.artifact[i] = a;
      pair.artifact_support[i] = a != 0.0 ? 1 : 0;
    }
  }

  auto make_record = [&](Modality m) {
    SliceRecord r;
    r.patient_id = patient_id;
    r.slice_index = slice_index;
    r.region = region;
    r.modality = m;
    r.size = n;
    r.mask = mask;
    return r;
  };
  pair.kvct = make_record(Modality::KVCT);
  pair.kvct.hu.resize(n * n);
  for (std::size_t i = 0; i < n * n; ++i) pair.kvct.hu[i] = pair.anatomy[i] + pair.artifact[i];

  std::vector<double> mv(n * n);
  for (std::size_t i = 0; i < n * n; ++i) {
    const double v = pair.anatomy[i];
    mv[i] = v > 0.0 ? spec.mvct.contrast * v : v;
  }
  mv = gaussian_smooth(mv, n, spec.mvct.smoothing_sigma);
  pair.mvct = make_record(Modality::MVCT);
  pair.mvct.hu.resize(n * n);
  for (std::size_t i = 0; i < n * n; ++i) {
    pair.mvct.hu[i] =
        std::clamp(mv[i] + spec.mvct.artifact_attenuation * pair.artifact[i], kMinHu, kMaxHu);
  }
  return pair;
}

}  // namespace

std::vector<SlicePair> generate_patient(std::uint64_t seed, const PhantomSpec& spec,
                                        std::size_t n_slices, int patient_id) {
  spec.validate();
  if (n_slices < 1) throw std::invalid_argument("generate_patient: n_slices must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const PatientShape shape = draw_patient(rng);

  const std::size_t n_head = std::max<std::size_t>(1, (n_slices * 3 + 4) / 5);
  // Contiguous band of slices at dental level carries metal.
  std::size_t band = 0;
  std::size_t band_start = 0;
  if (spec.fixed_inserts.empty() && spec.max_inserts > 0) {
    const double expected = spec.artifact_rate * static_cast<double>(n_slices);
    band = static_cast<std::size_t>(std::floor(expected + u(rng)));
    band = std::min(band, n_slices);
    const std::size_t lo = std::min(n_head / 2, n_slices - band);
    const std::size_t hi = std::max(lo, std::min(n_head, n_slices) - std::min(band, n_head));
    band_start = lo + static_cast<std::size_t>(u(rng) * static_cast<double>(hi - lo + 1));
    band_start = std::min(band_start, n_slices - band);
  }
  const std::size_t insert_count =
      spec.max_inserts == 0 ? 0 : 1 + static_cast<std::size_t>(u(rng) * spec.max_inserts) % spec.max_inserts;
  std::vector<MetalInsert> patient_inserts;
  for (std::size_t k = 0; k < insert_count; ++k) {
    const double phi = (u(rng) - 0.5) * 1.6;
    const double arc = 0.42 * shape.scale;
    patient_inserts.push_back({arc * std::sin(phi), -0.05 - arc * std::cos(phi) * 0.9,
                               spec.insert_radius, spec.insert_hu});
  }
  const double streak_phase = u(rng) * std::numbers::pi;

  std::vector<SlicePair> out;
  out.reserve(n_slices);
  for (std::size_t s = 0; s < n_slices; ++s) {
    const Region region = s < n_head ? Region::Head : Region::Neck;
    const double t = region == Region::Head
                         ? (n_head > 1 ? static_cast<double>(s) / static_cast<double>(n_head - 1) : 1.0)
                         : 0.0;
    const Ellipse body = slice_anatomy(shape, region, t).front();
    std::vector<MetalInsert> inserts;
    if (!spec.fixed_inserts.empty()) {
      for (const auto& ins : spec.fixed_inserts) {
        if (!insert_inside_body(ins, body)) {
          throw std::invalid_argument("metal insert at (" + std::to_string(ins.x) + ", " +
                                      std::to_string(ins.y) + ") lies outside the body");
        }
      }
      inserts = spec.fixed_inserts;
    } else if (s >= band_start && s < band_start + band) {
      for (const auto& ins : patient_inserts) inserts.push_back(place_inside(ins, body));
    }
    out.push_back(render_slice(spec, shape, region, t, inserts, streak_phase, patient_id,
                               static_cast<int>(s)));
  }
  return out;
}

std::vector<SlicePair> generate_dataset(std::uint64_t seed, const PhantomSpec& spec,
                                        std::size_t patients, std::size_t slices_per_patient) {
  std::vector<SlicePair> all;
  for (std::size_t p = 0; p < patients; ++p) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(p)};
    std::mt19937_64 sub(seq);
    auto slices = generate_patient(sub(), spec, slices_per_patient, static_cast<int>(p));
    std::move(slices.begin(), slices.end(), std::back_inserter(all));
  }
  return all;
}

bool classify_artifact(const SliceRecord& slice) {
  const double threshold =
      slice.modality == Modality::KVCT ? kKvctArtifactThresholdHu : kMvctArtifactThresholdHu;
  for (std::size_t i = 0; i < slice.hu.size(); ++i) {
    if (slice.mask[i] && slice.hu[i] > threshold) return true;
  }
  return false;
}

bool pair_is_artifact(const SlicePair& pair) {
  return classify_artifact(pair.kvct) || classify_artifact(pair.mvct);
}

DatasetSplit build_split(const std::vector<SlicePair>& pairs, double train_fraction,
                         std::uint64_t seed) {
  std::vector<int> patients;
  for (const auto& p : pairs) patients.push_back(p.kvct.patient_id);
  std::sort(patients.begin(), patients.end());
  patients.erase(std::unique(patients.begin(), patients.end()), patients.end());
  if (patients.size() < 2) {
    throw std::invalid_argument("build_split: need at least 2 patients, got " +
                                std::to_string(patients.size()));
  }
  if (train_fraction <= 0.0 || train_fraction >= 1.0) {
    throw std::invalid_argument("build_split: train_fraction must be in (0, 1)");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(patients.begin(), patients.end(), rng);
  const auto n = static_cast<long>(patients.size());
  const long n_train =
      std::clamp(std::lround(train_fraction * static_cast<double>(n)), 1L, n - 1);

  DatasetSplit split;
  split.train_patients.assign(patients.begin(), patients.begin() + n_train);
  split.test_patients.assign(patients.begin() + n_train, patients.end());
  std::sort(split.train_patients.begin(), split.train_patients.end());
  std::sort(split.test_patients.begin(), split.test_patients.end());

  std::size_t art = 0;
  split.is_artifact.resize(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const bool a = pair_is_artifact(pairs[i]);
    split.is_artifact[i] = a;
    art += a ? 1 : 0;
    const bool train = std::binary_search(split.train_patients.begin(),
                                          split.train_patients.end(), pairs[i].kvct.patient_id);
    (train ? split.train_all : split.test_all).push_back(i);
    if (a) (train ? split.train_art : split.test_art).push_back(i);
  }
  split.artifact_fraction =
      pairs.empty() ? 0.0 : static_cast<double>(art) / static_cast<double>(pairs.size());
  return split;
}

double normalize_hu(double hu) { return std::clamp(hu, -1000.0, 1000.0) / 1000.0; }

double denormalize_hu(double value) { return std::clamp(value, -1.0, 1.0) * 1000.0; }

std::vector<double> normalize_hu(std::span<const double> hu) {
  std::vector<double> out(hu.size());
  std::transform(hu.begin(), hu.end(), out.begin(), [](double v) { return normalize_hu(v); });
  return out;
}

std::vector<double> denormalize_hu(std::span<const double> values) {
  std::vector<double> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(),
                 [](double v) { return denormalize_hu(v); });
  return out;
}

TrainingExample make_example(const SlicePair& pair, const LossSpec& loss) {
  TrainingExample ex;
  ex.patient_id = pair.kvct.patient_id;
  ex.slice_index = pair.kvct.slice_index;
  ex.is_artifact = pair_is_artifact(pair);
  ex.size = pair.kvct.size;
  ex.input = normalize_hu(pair.kvct.hu);
  ex.target = normalize_hu(pair.mvct.hu);
  ex.mask = pair.kvct.mask;
  ex.weights = make_weight_map(ex.mask, ex.is_artifact, loss);
  return ex;
}

std::vector<TrainingExample> make_examples(const std::vector<SlicePair>& pairs,
                                           const std::vector<std::size_t>& indices,
                                           const LossSpec& loss) {
  std::vector<TrainingExample> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(make_example(pairs.at(i), loss));
  return out;
}

AugmentParams sample_augment(std::mt19937_64& rng, const AugmentConfig& cfg) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  AugmentParams p;
  p.flip = u(rng) < cfg.flip_probability;
  p.affine = u(rng) < cfg.affine_probability;
  if (p.affine) {
    p.shift_x = (2.0 * u(rng) - 1.0) * cfg.shift_limit;
    p.shift_y = (2.0 * u(rng) - 1.0) * cfg.shift_limit;
    p.scale = 1.0 + (2.0 * u(rng) - 1.0) * cfg.scale_limit;
    p.rotate_deg = (2.0 * u(rng) - 1.0) * cfg.rotate_limit_deg;
  }
  return p;
}

AugmentParams sample_augment(std::uint64_t seed, const AugmentConfig& cfg) {
  std::mt19937_64 rng(seed);
  return sample_augment(rng, cfg);
}

std::vector<double> warp_image(std::span<const double> image, std::size_t size,
                               const AugmentParams& params, Interpolation interp, double fill) {
  if (image.size() != size * size) throw std::invalid_argument("warp_image: size mismatch");
  const long n = static_cast<long>(size);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  const double angle = params.affine ? params.rotate_deg * std::numbers::pi / 180.0 : 0.0;
  const double scale = params.affine ? params.scale : 1.0;
  const double tx = params.affine ? params.shift_x * static_cast<double>(size) : 0.0;
  const double ty = params.affine ? params.shift_y * static_cast<double>(size) : 0.0;
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);

  auto at = [&](long x, long y) {
    if (x < 0 || y < 0 || x >= n || y >= n) return fill;
    if (params.flip) x = n - 1 - x;
    return image[static_cast<std::size_t>(y * n + x)];
  };

  std::vector<double> out(size * size);
  for (long oy = 0; oy < n; ++oy) {
    for (long ox = 0; ox < n; ++ox) {
      // Inverse map: output -> source in the (possibly flipped) input.
      const double px = static_cast<double>(ox) - c - tx;
      const double py = static_cast<double>(oy) - c - ty;
      const double sx = (ca * px + sa * py) / scale + c;
      const double sy = (-sa * px + ca * py) / scale + c;
      double v;
      if (interp == Interpolation::Nearest) {
        v = at(std::lround(sx), std::lround(sy));
      } else {
        const double fx = std::floor(sx);
        const double fy = std::floor(sy);
        const double wx = sx - fx;
        const double wy = sy - fy;
        const long x0 = static_cast<long>(fx);
        const long y0 = static_cast<long>(fy);
        v = (1 - wy) * ((1 - wx) * at(x0, y0) + wx * at(x0 + 1, y0)) +
            wy * ((1 - wx) * at(x0, y0 + 1) + wx * at(x0 + 1, y0 + 1));
      }
      out[static_cast<std::size_t>(oy * n + ox)] = v;
    }
  }
  return out;
}

TrainingExample augment(const TrainingExample& example, const AugmentParams& params,
                        double background_weight) {
  if (params.is_identity()) return example;
  TrainingExample out = example;
  const std::size_t n = example.size;
  out.input = warp_image(example.input, n, params, Interpolation::Bilinear, -1.0);
  out.target = warp_image(example.target, n, params, Interpolation::Bilinear, -1.0);
  const std::vector<double> mask_in(example.mask.begin(), example.mask.end());
  const auto mask = warp_image(mask_in, n, params, Interpolation::Nearest, 0.0);
  std::transform(mask.begin(), mask.end(), out.mask.begin(),
                 [](double v) { return static_cast<std::uint8_t>(v > 0.5 ? 1 : 0); });
  out.weights = warp_image(example.weights, n, params, Interpolation::Nearest, background_weight);
  return out;
}

namespace {

std::string pad3(int v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", v);
  return buf;
}

}  // namespace

void save_slice(const std::filesystem::path& path, const SliceRecord& slice) {
  const std::size_t plane = slice.size * slice.size;
  std::vector<double> packed(2 * plane);
  std::copy(slice.hu.begin(), slice.hu.end(), packed.begin());
  for (std::size_t i = 0; i < plane; ++i) packed[plane + i] = slice.mask[i];
  save_tensor(path, {2, slice.size, slice.size}, packed);
}

SliceRecord load_slice(const std::filesystem::path& path) {
  auto rec = load_tensor(path);
  SliceRecord s;
  if (rec.shape.size() == 2 && rec.shape[0] == rec.shape[1]) {
    s.size = rec.shape[0];
    s.hu = std::move(rec.values);
    s.mask.assign(s.hu.size(), 1);
  } else if (rec.shape.size() == 3 && rec.shape[0] == 2 && rec.shape[1] == rec.shape[2]) {
    s.size = rec.shape[1];
    const std::size_t plane = s.size * s.size;
    s.hu.assign(rec.values.begin(), rec.values.begin() + static_cast<long>(plane));
    s.mask.resize(plane);
    for (std::size_t i = 0; i < plane; ++i) s.mask[i] = rec.values[plane + i] > 0.5 ? 1 : 0;
  } else {
    throw std::runtime_error("slice file " + path.string() + " has unexpected shape " +
                             shape_to_string(rec.shape));
  }
  return s;
}

std::vector<std::filesystem::path> write_dataset(const std::filesystem::path& dir,
                                                 const std::vector<SlicePair>& pairs) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  manifest << "patient,slice,region,modality,is_artifact,path\n";
  for (const auto& pair : pairs) {
    const std::string pdir = "patient_" + pad3(pair.kvct.patient_id);
    std::filesystem::create_directories(dir / pdir);
    for (const SliceRecord* rec : {&pair.kvct, &pair.mvct}) {
      const std::string name = (rec->modality == Modality::KVCT ? "kvct_" : "mvct_") +
                               pad3(rec->slice_index) + ".rmds";
      const std::string rel = pdir + "/" + name;
      save_slice(dir / rel, *rec);
      manifest << rec->patient_id << ',' << rec->slice_index << ',' << to_string(rec->region)
               << ',' << to_string(rec->modality) << ',' << (classify_artifact(*rec) ? 1 : 0)
               << ',' << rel << '\n';
      written.push_back(dir / rel);
    }
  }
  written.push_back(dir / "manifest.csv");
  return written;
}

std::vector<SlicePair> read_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.csv");
  if (!manifest) throw std::runtime_error("no manifest.csv in " + dir.string());
  std::string line;
  std::getline(manifest, line);
  std::map<std::pair<int, int>, SlicePair> by_key;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string patient, slice, region, modality, flag, path;
    std::getline(ss, patient, ',');
    std::getline(ss, slice, ',');
    std::getline(ss, region, ',');
    std::getline(ss, modality, ',');
    std::getline(ss, flag, ',');
    std::getline(ss, path, ',');
    SliceRecord rec = load_slice(dir / path);
    rec.patient_id = std::stoi(patient);
    rec.slice_index = std::stoi(slice);
    rec.region = region_from_string(region);
    rec.modality = modality_from_string(modality);
    auto& pair = by_key[{rec.patient_id, rec.slice_index}];
    (rec.modality == Modality::KVCT ? pair.kvct : pair.mvct) = std::move(rec);
  }
  std::vector<SlicePair> out;
  for (auto& [key, pair] : by_key) {
    if (pair.kvct.hu.empty() || pair.mvct.hu.empty()) {
      throw std::runtime_error("dataset slice " + std::to_string(key.first) + "/" +
                               std::to_string(key.second) + " lacks one modality");
    }
    out.push_back(std::move(pair));
  }
  return out;
}

}  // namespace remar

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "remar/data.hpp"
#include "remar/losses.hpp"
#include "remar/manifest.hpp"

using namespace remar;
namespace fs = std::filesystem;

namespace {

SliceRecord fixture(Modality m, double peak, bool inside_mask = true) {
  SliceRecord s;
  s.modality = m;
  s.size = 4;
  s.hu.assign(16, 40.0);
  s.mask.assign(16, 1);
  s.hu[5] = peak;
  if (!inside_mask) s.mask[5] = 0;
  return s;
}

}  // namespace

TEST(Classifier, ThresholdBoundaries) {
  EXPECT_TRUE(classify_artifact(fixture(Modality::KVCT, 2100)));
  EXPECT_TRUE(classify_artifact(fixture(Modality::KVCT, 2001)));
  EXPECT_FALSE(classify_artifact(fixture(Modality::KVCT, 1999)));
  EXPECT_FALSE(classify_artifact(fixture(Modality::KVCT, 2000)));
  EXPECT_TRUE(classify_artifact(fixture(Modality::MVCT, 1001)));
  EXPECT_FALSE(classify_artifact(fixture(Modality::MVCT, 999)));
  EXPECT_FALSE(classify_artifact(fixture(Modality::KVCT, 3000, false)));
}

TEST(Classifier, Monotone) {
  auto s = fixture(Modality::KVCT, 2500);
  ASSERT_TRUE(classify_artifact(s));
  for (auto& v : s.hu) v += 100.0;
  EXPECT_TRUE(classify_artifact(s));
}

TEST(Generator, KvctIsAnatomyPlusArtifactAndMasksMatch) {
  PhantomSpec spec;
  spec.artifact_rate = 1.0;
  const auto pairs = generate_patient(3, spec, 6);
  for (const auto& p : pairs) {
    ASSERT_EQ(p.kvct.hu.size(), 64u * 64u);
    EXPECT_EQ(p.kvct.mask, p.mvct.mask);
    for (std::size_t i = 0; i < p.kvct.hu.size(); ++i) {
      ASSERT_NEAR(p.kvct.hu[i], p.anatomy[i] + p.artifact[i], 1e-9);
      if (!p.artifact_support[i]) ASSERT_EQ(p.artifact[i], 0.0);
      ASSERT_GE(p.kvct.hu[i], kMinHu);
      ASSERT_LE(p.kvct.hu[i], kMaxHu);
    }
  }
}

TEST(Generator, NoInsertsMeansNoArtifact) {
  PhantomSpec spec;
  spec.max_inserts = 0;
  for (const auto& p : generate_dataset(1, spec, 3, 8)) {
    EXPECT_EQ(p.insert_count, 0u);
    EXPECT_TRUE(std::all_of(p.artifact.begin(), p.artifact.end(), [](double a) { return a == 0.0; }));
    EXPECT_FALSE(pair_is_artifact(p));
  }
}

TEST(Generator, FixedInsertClassifiedAsArtifact) {
  PhantomSpec spec;
  spec.fixed_inserts = {{0.1, 0.1, 0.05, 3200.0}};
  const auto pairs = generate_patient(2, spec, 3);
  for (const auto& p : pairs) {
    EXPECT_TRUE(classify_artifact(p.kvct));
    EXPECT_TRUE(pair_is_artifact(p));
  }
}

TEST(Generator, InsertOutsideBodyRejected) {
  PhantomSpec spec;
  spec.fixed_inserts = {{0.95, 0.95, 0.05, 3200.0}};
  EXPECT_THROW(generate_patient(1, spec, 2), std::invalid_argument);
}

TEST(Generator, SameSeedBitIdentical) {
  PhantomSpec spec;
  const auto a = generate_dataset(9, spec, 2, 5);
  const auto b = generate_dataset(9, spec, 2, 5);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].kvct.hu, b[i].kvct.hu);
    EXPECT_EQ(a[i].mvct.hu, b[i].mvct.hu);
  }
}

TEST(Generator, ArtifactSlicesFormContiguousBand) {
  PhantomSpec spec;
  spec.artifact_rate = 0.3;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto pairs = generate_patient(seed, spec, 20);
    std::vector<std::size_t> metal;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (pairs[i].insert_count > 0) metal.push_back(i);
    }
    if (metal.empty()) continue;
    EXPECT_EQ(metal.back() - metal.front() + 1, metal.size());
  }
}

TEST(Generator, ArtifactFractionNearTarget) {
  PhantomSpec spec;
  const auto pairs = generate_dataset(2024, spec, 20, 20);
  const auto split = build_split(pairs, 0.7, 1);
  EXPECT_GE(split.artifact_fraction, 0.10);
  EXPECT_LE(split.artifact_fraction, 0.20);
}

TEST(Split, SeventyThirtyByPatient) {
  PhantomSpec spec;
  spec.size = 16;
  const auto pairs = generate_dataset(4, spec, 10, 3);
  const auto split = build_split(pairs, 0.7, 5);
  EXPECT_EQ(split.train_patients.size(), 7u);
  EXPECT_EQ(split.test_patients.size(), 3u);
  EXPECT_EQ(split.train_all.size() + split.test_all.size(), pairs.size());
  std::set<int> train(split.train_patients.begin(), split.train_patients.end());
  for (auto i : split.test_all) EXPECT_EQ(train.count(pairs[i].kvct.patient_id), 0u);
  for (auto i : split.train_art) EXPECT_TRUE(split.is_artifact[i]);
}

TEST(Split, AllCleanGivesEmptyArtifactSubset) {
  PhantomSpec spec;
  spec.size = 16;
  spec.max_inserts = 0;
  const auto pairs = generate_dataset(4, spec, 4, 3);
  const auto split = build_split(pairs, 0.7, 5);
  EXPECT_TRUE(split.train_art.empty());
  EXPECT_TRUE(split.test_art.empty());
  EXPECT_EQ(split.train_all.size() + split.test_all.size(), pairs.size());
  EXPECT_THROW(build_split(generate_dataset(1, spec, 1, 2), 0.7, 1), std::invalid_argument);
}

TEST(Normalize, WindowMapping) {
  EXPECT_EQ(normalize_hu(0.0), 0.0);
  EXPECT_EQ(normalize_hu(1000.0), 1.0);
  EXPECT_EQ(normalize_hu(-1000.0), -1.0);
  EXPECT_EQ(normalize_hu(3200.0), 1.0);
  EXPECT_EQ(normalize_hu(-1024.0), -1.0);
  for (double hu : {-1000.0, -250.0, 0.0, 40.0, 999.0}) {
    EXPECT_NEAR(denormalize_hu(normalize_hu(hu)), hu, 1e-12);
  }
}

TEST(Augment, IdentityParamsLeaveExampleUnchanged) {
  PhantomSpec spec;
  const auto pairs = generate_patient(1, spec, 1);
  const auto ex = make_example(pairs[0], LossSpec{});
  const auto out = augment(ex, AugmentParams{}, 1.0);
  EXPECT_EQ(out.input, ex.input);
  EXPECT_EQ(out.mask, ex.mask);
}

TEST(Augment, FlipIsConsistentAcrossChannels) {
  PhantomSpec spec;
  spec.fixed_inserts = {{0.2, 0.0, 0.05, 3200.0}};
  const auto pairs = generate_patient(1, spec, 1);
  const auto ex = make_example(pairs[0], LossSpec{});
  AugmentParams p;
  p.flip = true;
  const auto out = augment(ex, p, 0.1);
  const std::size_t n = ex.size;
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      ASSERT_EQ(out.input[y * n + x], ex.input[y * n + n - 1 - x]);
      ASSERT_EQ(out.target[y * n + x], ex.target[y * n + n - 1 - x]);
      ASSERT_EQ(out.mask[y * n + x], ex.mask[y * n + n - 1 - x]);
      ASSERT_EQ(out.weights[y * n + x], ex.weights[y * n + n - 1 - x]);
    }
  }
}

TEST(Augment, AffineKeepsMaskBinaryAndFillsBackground) {
  PhantomSpec spec;
  const auto pairs = generate_patient(2, spec, 1);
  const auto ex = make_example(pairs[0], LossSpec{});
  AugmentParams p;
  p.affine = true;
  p.shift_x = 0.0625;
  p.scale = 0.9;
  p.rotate_deg = 5.0;
  const auto out = augment(ex, p, 1.0);
  for (auto m : out.mask) EXPECT_TRUE(m == 0 || m == 1);
  EXPECT_EQ(out.input[0], -1.0);
}

TEST(Augment, SampleFrequencies) {
  std::mt19937_64 rng(7);
  std::size_t flips = 0, affines = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto p = sample_augment(rng);
    flips += p.flip;
    affines += p.affine;
    if (p.affine) {
      EXPECT_LE(std::abs(p.shift_x), 0.0625);
      EXPECT_GE(p.scale, 0.9);
      EXPECT_LE(p.scale, 1.1);
      EXPECT_LE(std::abs(p.rotate_deg), 5.0);
    }
  }
  EXPECT_NEAR(flips / 10000.0, 0.5, 0.02);
  EXPECT_NEAR(affines / 10000.0, 0.8, 0.02);
}

TEST(DatasetIo, WriteReadRoundTripAndByteIdentity) {
  PhantomSpec spec;
  spec.size = 32;
  spec.artifact_rate = 0.5;
  const auto pairs = generate_dataset(6, spec, 2, 3);
  const fs::path root = fs::temp_directory_path() / "remar_test_dataset";
  fs::remove_all(root);
  const auto a = write_dataset(root / "a", pairs);
  const auto b = write_dataset(root / "b", generate_dataset(6, spec, 2, 3));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(sha256_file(a[i]), sha256_file(b[i]));
  const auto back = read_dataset(root / "a");
  ASSERT_EQ(back.size(), pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(back[i].kvct.mask, pairs[i].kvct.mask);
    EXPECT_EQ(back[i].kvct.region, pairs[i].kvct.region);
    EXPECT_EQ(pair_is_artifact(back[i]), pair_is_artifact(pairs[i]));
    for (std::size_t j = 0; j < pairs[i].kvct.hu.size(); ++j) {
      ASSERT_EQ(back[i].kvct.hu[j], static_cast<double>(static_cast<float>(pairs[i].kvct.hu[j])));
    }
  }
  fs::remove_all(root);
}

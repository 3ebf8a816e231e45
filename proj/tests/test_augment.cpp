#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace aortaseg;
using testutil::make_image;
using testutil::make_label;

namespace
{

Volume ramp(const Shape3 & s)
{
  return make_image(s, [&](Index i, Index j, Index k) {return static_cast<float>((i * s[1] + j) * s[2] + k);});
}

Volume stripes(const Shape3 & s)
{
  return Volume(s, {1, 1, 1}, {0, 0, 0}, VolumeKind::label, [&] {
        std::vector<float> d(static_cast<std::size_t>(product(s)));
        for (std::size_t i = 0; i < d.size(); ++i) {d[i] = static_cast<float>(i % 3);}
        return d;
      }());
}

}  // namespace

TEST(RandomCrop, FullSizeCropIsIdentity)
{
  Rng rng(1);
  const auto img = ramp({4, 5, 3});
  const auto lab = stripes({4, 5, 3});
  const auto [ci, cl] = random_crop_pair(img, lab, {4, 5, 3}, rng);
  EXPECT_EQ(ci.values(), img.values());
  EXPECT_EQ(cl.values(), lab.values());
}

TEST(RandomCrop, SameSeedSameWindowAndPairAligned)
{
  const auto img = ramp({4, 4, 4});
  const auto lab = make_label({4, 4, 4}, [](Index i, Index j, Index k) {return i + j + k == 5;});
  Rng a(99);
  Rng b(99);
  const auto r1 = random_crop_pair(img, lab, {2, 2, 2}, a);
  const auto r2 = random_crop_pair(img, lab, {2, 2, 2}, b);
  EXPECT_EQ(r1.first.values(), r2.first.values());
  EXPECT_EQ(r1.second.values(), r2.second.values());
  // Label voxel v of the crop sits under image value v's position.
  const float base = r1.first[0];
  const Index si = static_cast<Index>(base) / 16;
  const Index sj = (static_cast<Index>(base) / 4) % 4;
  const Index sk = static_cast<Index>(base) % 4;
  for (Index i = 0; i < 2; ++i) {
    for (Index j = 0; j < 2; ++j) {
      for (Index k = 0; k < 2; ++k) {
        EXPECT_EQ(r1.first.at(i, j, k), img.at(si + i, sj + j, sk + k));
        EXPECT_EQ(r1.second.at(i, j, k), lab.at(si + i, sj + j, sk + k));
      }
    }
  }
}

TEST(RandomCrop, ForegroundBiasStatistics)
{
  const auto img = ramp({10, 10, 10});
  const auto lab = make_label({10, 10, 10}, [](Index i, Index j, Index k) {return i == 7 && j == 2 && k == 8;});
  Rng rng(5);
  int hits = 0;
  for (int t = 0; t < 1000; ++t) {
    hits += random_crop_pair(img, lab, {4, 4, 4}, rng).second.count_nonzero() > 0;
  }
  EXPECT_GE(hits, 400);
}

TEST(RandomCrop, SmallVolumesArePaddedSymmetrically)
{
  Rng rng(3);
  const auto img = Volume::filled({2, 4, 4}, {1, 1, 1}, {0, 0, 0}, VolumeKind::image, 5.0f);
  const auto lab = Volume::filled({2, 4, 4}, {1, 1, 1}, {0, 0, 0}, VolumeKind::label, 1.0f);
  const auto [ci, cl] = random_crop_pair(img, lab, {4, 4, 4}, rng);
  EXPECT_EQ(ci.shape(), (Shape3{4, 4, 4}));
  for (Index j = 0; j < 4; ++j) {
    for (Index k = 0; k < 4; ++k) {
      EXPECT_EQ(ci.at(0, j, k), 0.0f);
      EXPECT_EQ(ci.at(1, j, k), 5.0f);
      EXPECT_EQ(ci.at(2, j, k), 5.0f);
      EXPECT_EQ(ci.at(3, j, k), 0.0f);
      EXPECT_EQ(cl.at(0, j, k), 0.0f);
      EXPECT_EQ(cl.at(1, j, k), 1.0f);
    }
  }
}

TEST(RandomCrop, ShapeMismatchRejected)
{
  Rng rng(0);
  EXPECT_THROW(random_crop_pair(ramp({3, 3, 3}), stripes({3, 3, 4}), {2, 2, 2}, rng), ShapeError);
}

TEST(Augment, DisabledPipelineIsIdentity)
{
  Rng rng(7);
  const auto img = ramp({5, 4, 3});
  const auto lab = stripes({5, 4, 3});
  const auto [ai, al] = apply_augmentations(img, lab, AugmentConfig::disabled({5, 4, 3}), rng);
  EXPECT_EQ(ai.values(), img.values());
  EXPECT_EQ(al.values(), lab.values());
}

TEST(Augment, DoubleFlipIsIdentity)
{
  const auto img = ramp({3, 4, 5});
  for (int axis = 0; axis < 3; ++axis) {
    const auto once = flip(img, axis);
    EXPECT_NE(once.values(), img.values());
    EXPECT_EQ(flip(once, axis).values(), img.values());
  }
  auto cfg = AugmentConfig::disabled({3, 4, 5});
  cfg.p_flip = 1.0;
  Rng rng(1);
  const auto lab = stripes({3, 4, 5});
  const auto [i1, l1] = apply_augmentations(img, lab, cfg, rng);
  const auto [i2, l2] = apply_augmentations(i1, l1, cfg, rng);
  EXPECT_EQ(i2.values(), img.values());
  EXPECT_EQ(l2.values(), lab.values());
}

TEST(Augment, QuarterTurnAboutZIsVoxelPermutation)
{
  const auto img = ramp({3, 3, 3});
  const auto lab = stripes({3, 3, 3});
  const Vec3 angles{0, 0, std::numbers::pi / 2};
  const auto ri = affine_transform(img, angles, 1.0);
  const auto rl = affine_transform(lab, angles, 1.0);
  // out(i, j, k) = in(j, 2 - i, k).
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 3; ++j) {
      for (Index k = 0; k < 3; ++k) {
        EXPECT_FLOAT_EQ(ri.at(i, j, k), img.at(j, 2 - i, k));
        EXPECT_EQ(rl.at(i, j, k), lab.at(j, 2 - i, k));
      }
    }
  }
  auto sorted = ri.values();
  std::sort(sorted.begin(), sorted.end());
  auto ref = img.values();
  std::sort(ref.begin(), ref.end());
  EXPECT_EQ(sorted, ref);
}

TEST(Augment, LabelsNeverGainValuesAndIntensityLeavesLabelBitwise)
{
  auto cfg = AugmentConfig{};
  cfg.crop_size = {6, 7, 5};
  cfg.p_flip = 0.5;
  cfg.p_affine = 1.0;
  cfg.p_intensity_scale = cfg.p_intensity_shift = cfg.p_noise = cfg.p_blur = 1.0;
  const auto img = ramp({6, 7, 5});
  const auto lab = stripes({6, 7, 5});
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    const auto [ai, al] = apply_augmentations(img, lab, cfg, rng);
    for (float v : al.distinct_values()) {EXPECT_TRUE(v == 0.0f || v == 1.0f || v == 2.0f);}
  }
  auto icfg = AugmentConfig::disabled({6, 7, 5});
  icfg.p_intensity_scale = icfg.p_intensity_shift = icfg.p_noise = icfg.p_blur = 1.0;
  const auto [ii, il] = apply_augmentations(img, lab, icfg, rng);
  EXPECT_EQ(il.values(), lab.values());
  EXPECT_NE(ii.values(), img.values());
}

TEST(Augment, SameSeedSameOutput)
{
  AugmentConfig cfg;
  cfg.p_affine = cfg.p_noise = cfg.p_blur = 1.0;
  const auto img = ramp({5, 5, 5});
  const auto lab = stripes({5, 5, 5});
  Rng a(1234);
  Rng b(1234);
  const auto r1 = apply_augmentations(img, lab, cfg, a);
  const auto r2 = apply_augmentations(img, lab, cfg, b);
  EXPECT_EQ(r1.first.values(), r2.first.values());
  EXPECT_EQ(r1.second.values(), r2.second.values());
}

TEST(Augment, SpatialTransformsKeepConstantImageConstant)
{
  auto cfg = AugmentConfig::disabled({6, 6, 6});
  cfg.p_flip = 1.0;
  cfg.p_affine = 1.0;
  const auto img = Volume::filled({6, 6, 6}, {1, 1, 1}, {0, 0, 0}, VolumeKind::image, 3.25f);
  const auto lab = stripes({6, 6, 6});
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    const auto [ai, al] = apply_augmentations(img, lab, cfg, rng);
    for (float v : ai.values()) {EXPECT_NEAR(v, 3.25f, 1e-5f);}
  }
}

TEST(Augment, ConfigValidation)
{
  AugmentConfig c;
  c.p_flip = 1.5;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = AugmentConfig{};
  c.crop_size = {0, 4, 4};
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = AugmentConfig{};
  c.scale_min = 1.2;
  EXPECT_THROW(c.validate(), InvalidArgument);
  EXPECT_NO_THROW(AugmentConfig{}.validate());
}

TEST(GaussianBlur, PreservesConstantsAndMean)
{
  const auto img = Volume::filled({5, 6, 7}, {1, 1, 1}, {0, 0, 0}, VolumeKind::image, 2.0f);
  const auto blurred = gaussian_blur(img, 0.8);
  for (float v : blurred.values()) {EXPECT_NEAR(v, 2.0f, 1e-5f);}
  const auto spike = make_image({9, 9, 9}, [](Index i, Index j, Index k) {return i == 4 && j == 4 && k == 4 ? 1.0f : 0.0f;});
  const auto b = gaussian_blur(spike, 0.7);
  double s = 0;
  for (float v : b.values()) {s += v;}
  EXPECT_NEAR(s, 1.0, 1e-5);
  EXPECT_LT(b.at(4, 4, 4), 1.0f);
}

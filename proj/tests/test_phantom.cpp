#include <gtest/gtest.h>

#include <numbers>

#include "test_util.hpp"

using namespace aortaseg;

namespace
{

PhantomSpec straight_tube(double r)
{
  PhantomSpec s;
  s.shape = {40, 40, 48};
  s.spacing = {1, 1, 1};
  s.amplitude = {0.0, 0.0};
  s.radius_top = s.radius_bottom = r;
  s.seed = 3;
  return s;
}

std::vector<double> vessel_values(const Volume & img, const Volume & lab)
{
  std::vector<double> v;
  for (Index i = 0; i < img.size(); ++i) {
    if (lab[i] != 0.0f) {v.push_back(img[i]);}
  }
  return v;
}

}  // namespace

TEST(Phantom, StraightTubeMatchesCylinderVolume)
{
  for (double r : {5.0, 7.5, 10.0}) {
    const auto spec = straight_tube(r);
    const auto lab = phantom_label(spec);
    const double height = static_cast<double>(spec.z_last() - spec.z_first() + 1);
    const double analytic = std::numbers::pi * r * r * height;
    EXPECT_LT(std::abs(static_cast<double>(lab.count_nonzero()) - analytic) / analytic, 0.05) << r;
    // Every tube slice is the same disc.
    const auto c = spec.centerline_at(0.0);
    for (Index k = spec.z_first(); k <= spec.z_last(); ++k) {
      EXPECT_EQ(lab.at(static_cast<Index>(c[0]), static_cast<Index>(c[1]), k), 1.0f);
    }
  }
}

TEST(Phantom, SameSeedSameCase)
{
  PhantomSpec s;
  s.seed = 17;
  const auto [i1, l1] = generate_case(s);
  const auto [i2, l2] = generate_case(s);
  EXPECT_EQ(i1.values(), i2.values());
  EXPECT_EQ(l1.values(), l2.values());
  s.seed = 18;
  EXPECT_NE(generate_case(s).first.values(), i1.values());
  EXPECT_EQ(generate_case(s).second.values(), l1.values());
}

TEST(Phantom, OffsetVariantShiftsImageOnly)
{
  PhantomSpec s;
  s.seed = 5;
  const auto [img, lab] = generate_case(s);
  s.intensity_offset = 1024.0;
  const auto [oimg, olab] = generate_case(s);
  EXPECT_EQ(olab.values(), lab.values());
  for (Index i = 0; i < img.size(); ++i) {ASSERT_EQ(oimg[i], img[i] + 1024.0f);}
}

TEST(Phantom, GeometryFollowsDefaults)
{
  const auto [img, lab] = generate_case(PhantomSpec{});
  EXPECT_EQ(img.shape(), (Shape3{64, 64, 64}));
  EXPECT_EQ(img.spacing(), (Vec3{0.7, 0.7, 1.0}));
  EXPECT_EQ(img.kind(), VolumeKind::image);
  EXPECT_EQ(lab.kind(), VolumeKind::label);
  EXPECT_EQ(lab.distinct_values(), (std::vector<float>{0.0f, 1.0f}));
}

TEST(Phantom, JitteredLabelsAreOneComponentInsideTheMargin)
{
  std::mt19937_64 rng(2024);
  int branched = 0;
  for (int t = 0; t < 30; ++t) {
    PhantomSpec base;
    base.shape = t % 2 ? Shape3{64, 64, 64} : Shape3{32, 32, 40};
    const auto spec = jittered_spec(base, rng);
    branched += spec.branch;
    const auto lab = phantom_label(spec);
    ASSERT_GT(lab.count_nonzero(), 0);
    EXPECT_EQ(count_components(lab), 1) << "trial " << t;
    const auto & s = lab.shape();
    for (Index i = 0; i < s[0]; ++i) {
      for (Index j = 0; j < s[1]; ++j) {
        for (Index k = 0; k < s[2]; ++k) {
          const bool border = i < spec.margin || j < spec.margin || k < spec.margin ||
            i > s[0] - 1 - spec.margin || j > s[1] - 1 - spec.margin || k > s[2] - 1 - spec.margin;
          if (border) {ASSERT_EQ(lab.at(i, j, k), 0.0f) << "trial " << t;}
        }
      }
    }
  }
  EXPECT_GT(branched, 0);
  EXPECT_LT(branched, 30);
}

TEST(Phantom, VesselPercentilesWithinThreeSigma)
{
  std::mt19937_64 rng(7);
  for (int t = 0; t < 5; ++t) {
    auto spec = jittered_spec(PhantomSpec{}, rng);
    const auto [img, lab] = generate_case(spec);
    const auto v = vessel_values(img, lab);
    const double lo = spec.vessel_mean - 3 * spec.vessel_std;
    const double hi = spec.vessel_mean + 3 * spec.vessel_std;
    for (double p : {5.0, 95.0}) {
      const double q = testutil::sorted_percentile(v, p);
      EXPECT_GE(q, lo);
      EXPECT_LE(q, hi);
    }
  }
}

TEST(Phantom, ScaleAndOffsetApplyLast)
{
  PhantomSpec s;
  s.shape = {16, 16, 16};
  s.radius_top = 3;
  s.radius_bottom = 2;
  s.amplitude = {1, 1};
  s.seed = 9;
  const auto base = generate_case(s).first;
  s.intensity_scale = 2.0;
  s.intensity_offset = -7.0;
  const auto mapped = generate_case(s).first;
  for (Index i = 0; i < base.size(); ++i) {ASSERT_EQ(mapped[i], static_cast<float>(2.0 * base[i] - 7.0));}
}

TEST(Phantom, InvalidSpecsRejected)
{
  auto bad = [](auto mutate) {
      PhantomSpec s;
      mutate(s);
      EXPECT_THROW(phantom_label(s), InvalidArgument);
    };
  bad([](PhantomSpec & s) {s.radius_bottom = 0.0;});
  bad([](PhantomSpec & s) {s.amplitude = {40.0, 0.0};});
  bad([](PhantomSpec & s) {s.radius_top = 40.0;});
  bad([](PhantomSpec & s) {s.shape = {6, 64, 64};});
  bad([](PhantomSpec & s) {
      s.branch = true;
      s.branch_length = 200.0;
    });
  bad([](PhantomSpec & s) {s.vessel_std = -1.0;});
}

TEST(PhantomDataset, TwentyCasesFiveFoldsOfFour)
{
  PhantomDatasetOptions opt;
  opt.base.shape = {24, 24, 24};
  opt.offset_fraction = 0.25;
  const auto dir = testutil::scratch_dir("phantom_ds");
  const auto dl = generate_dataset(20, dir, 42, opt);
  ASSERT_EQ(dl.entries.size(), 20u);
  EXPECT_NO_THROW(dl.validate(5));
  std::map<Index, int> per_fold;
  int offset_cases = 0;
  for (const auto & e : dl.entries) {
    ++per_fold[e.fold];
    EXPECT_TRUE(fs::exists(e.image));
    const auto lab = load_volume(e.label);
    EXPECT_GT(lab.count_nonzero(), 0);
    const auto img = load_volume(e.image);
    // Background noise never reaches 500 without the offset.
    offset_cases += *std::min_element(img.values().begin(), img.values().end()) > 500.0f;
  }
  for (const auto & [f, n] : per_fold) {EXPECT_EQ(n, 4) << f;}
  EXPECT_EQ(per_fold.size(), 5u);
  EXPECT_EQ(offset_cases, 5);

  const auto reread = load_datalist(dir / "dataset.json");
  ASSERT_EQ(reread.entries.size(), 20u);
  for (std::size_t i = 0; i < 20; ++i) {EXPECT_EQ(reread.entries[i].fold, dl.entries[i].fold);}
}

TEST(PhantomDataset, RegenerationIsByteIdentical)
{
  PhantomDatasetOptions opt;
  opt.base.shape = {20, 20, 20};
  const auto a = generate_dataset(6, testutil::scratch_dir("phantom_a"), 11, opt);
  const auto b = generate_dataset(6, testutil::scratch_dir("phantom_b"), 11, opt);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(detail::read_all(a.entries[i].image), detail::read_all(b.entries[i].image));
    EXPECT_EQ(detail::read_all(a.entries[i].label), detail::read_all(b.entries[i].label));
    EXPECT_EQ(a.entries[i].fold, b.entries[i].fold);
  }
  EXPECT_THROW(generate_dataset(0, testutil::scratch_dir("phantom_c"), 1, opt), InvalidArgument);
}

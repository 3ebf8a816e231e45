#include <gtest/gtest.h>

#include <deque>

#include "test_util.hpp"

using namespace aortaseg;
using testutil::make_label;
using testutil::random_mask;

namespace
{

Volume single_voxel(const Shape3 & s, Index i, Index j, Index k, const Vec3 & spacing)
{
  return make_label(s, [=](Index a, Index b, Index c) {return a == i && b == j && c == k;}, spacing);
}

/// Component sizes by a plain BFS flood fill, largest first.
std::vector<Index> component_sizes(const Volume & m)
{
  const auto & s = m.shape();
  std::vector<int> seen(static_cast<std::size_t>(m.size()), 0);
  std::vector<Index> sizes;
  for (Index v = 0; v < m.size(); ++v) {
    if (m[v] == 0.0f || seen[v]) {continue;}
    std::deque<Index> q{v};
    seen[v] = 1;
    Index n = 0;
    while (!q.empty()) {
      const Index u = q.front();
      q.pop_front();
      ++n;
      const Index i = u / (s[1] * s[2]);
      const Index j = (u / s[2]) % s[1];
      const Index k = u % s[2];
      for (Index di = -1; di <= 1; ++di) {
        for (Index dj = -1; dj <= 1; ++dj) {
          for (Index dk = -1; dk <= 1; ++dk) {
            const Index a = i + di;
            const Index b = j + dj;
            const Index c = k + dk;
            if (a < 0 || b < 0 || c < 0 || a >= s[0] || b >= s[1] || c >= s[2]) {continue;}
            const Index w = m.index(a, b, c);
            if (m[w] != 0.0f && !seen[w]) {
              seen[w] = 1;
              q.push_back(w);
            }
          }
        }
      }
    }
    sizes.push_back(n);
  }
  std::sort(sizes.rbegin(), sizes.rend());
  return sizes;
}

}  // namespace

TEST(Dice, IdentityDisjointAndCountingOracle)
{
  const auto cube = make_label({6, 6, 6}, [](Index i, Index j, Index k) {return i < 2 && j < 2 && k < 2;});
  EXPECT_EQ(dice_score(cube, cube), 1.0);
  const auto far = make_label({6, 6, 6}, [](Index i, Index j, Index k) {return i > 3 && j > 3 && k > 3;});
  EXPECT_EQ(dice_score(cube, far), 0.0);
  // Shift by one along x: overlap is half of the 8-voxel cube.
  const auto shifted = make_label({6, 6, 6}, [](Index i, Index j, Index k) {return i >= 1 && i < 3 && j < 2 && k < 2;});
  EXPECT_EQ(dice_score(cube, shifted), 0.5);
  const auto empty = Volume::filled({6, 6, 6}, {1, 1, 1}, {0, 0, 0}, VolumeKind::label);
  EXPECT_EQ(dice_score(empty, empty), 1.0);
  EXPECT_EQ(dice_score(cube, empty), 0.0);
}

TEST(Dice, SymmetricAndBounded)
{
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    const auto a = random_mask(rng, {5, 4, 6}, 0.3);
    const auto b = random_mask(rng, {5, 4, 6}, 0.5);
    const double d = dice_score(a, b);
    EXPECT_EQ(d, dice_score(b, a));
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
  }
}

TEST(Dice, GridMismatchRejected)
{
  const auto a = Volume::filled({2, 2, 2}, {1, 1, 1}, {0, 0, 0}, VolumeKind::label);
  const auto b = Volume::filled({2, 2, 3}, {1, 1, 1}, {0, 0, 0}, VolumeKind::label);
  const auto c = Volume::filled({2, 2, 2}, {1, 1, 2}, {0, 0, 0}, VolumeKind::label);
  EXPECT_THROW(dice_score(a, b), ShapeError);
  EXPECT_THROW(dice_score(a, c), ShapeError);
}

TEST(Hd95, IdenticalMasksGiveZero)
{
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    auto m = random_mask(rng, {6, 6, 6}, 0.4, {0.7, 0.7, 1.0});
    if (m.count_nonzero() == 0) {continue;}
    EXPECT_EQ(hd95(m, m), 0.0);
  }
}

TEST(Hd95, SingleVoxelsAlongZ)
{
  const Vec3 sp{0.7, 0.7, 1.0};
  const auto a = single_voxel({5, 5, 8}, 2, 2, 1, sp);
  const auto b = single_voxel({5, 5, 8}, 2, 2, 4, sp);
  EXPECT_DOUBLE_EQ(hd95(a, b, sp), 3.0);
  const auto c = single_voxel({5, 5, 8}, 2, 4, 1, sp);
  EXPECT_DOUBLE_EQ(hd95(a, c, sp), std::sqrt(2 * 0.7 * 2 * 0.7));
}

TEST(Hd95, EmptyMaskConventions)
{
  const auto e = Volume::filled({4, 4, 4}, {1, 1, 1}, {0, 0, 0}, VolumeKind::label);
  const auto m = single_voxel({4, 4, 4}, 1, 1, 1, {1, 1, 1});
  EXPECT_EQ(hd95(e, e), 0.0);
  EXPECT_EQ(hd95(e, m), kHd95Infinite);
  EXPECT_EQ(hd95(m, e), kHd95Infinite);
  EXPECT_TRUE(std::isinf(hd95(m, e)));
}

TEST(Hd95, MatchesBruteForceOnRandomMasks)
{
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<Index> n(1, 6);
  std::uniform_real_distribution<double> sp(0.5, 2.0);
  std::uniform_real_distribution<double> dens(0.05, 0.7);
  for (int t = 0; t < 100; ++t) {
    const Shape3 s{n(rng), n(rng), n(rng)};
    const Vec3 spacing{sp(rng), sp(rng), sp(rng)};
    const auto a = random_mask(rng, s, dens(rng), spacing);
    const auto b = random_mask(rng, s, dens(rng), spacing);
    const double fast = hd95(a, b, spacing);
    const double slow = testutil::brute_hd95(a, b, spacing);
    if (std::isinf(slow)) {
      EXPECT_TRUE(std::isinf(fast));
    } else {
      ASSERT_EQ(fast, slow) << "trial " << t;
    }
  }
}

TEST(Hd95, MatchesBruteForceOn8Cubed)
{
  std::mt19937_64 rng(4);
  for (int t = 0; t < 10; ++t) {
    const auto a = random_mask(rng, {8, 8, 8}, 0.2, {0.7, 0.7, 1.0});
    const auto b = random_mask(rng, {8, 8, 8}, 0.3, {0.7, 0.7, 1.0});
    EXPECT_EQ(hd95(a, b), testutil::brute_hd95(a, b, {0.7, 0.7, 1.0}));
  }
}

TEST(Hd95, SymmetricAndLinearInSpacing)
{
  std::mt19937_64 rng(5);
  for (int t = 0; t < 30; ++t) {
    const Vec3 s{0.7, 0.9, 1.3};
    const auto a = random_mask(rng, {6, 5, 7}, 0.3, s);
    const auto b = random_mask(rng, {6, 5, 7}, 0.3, s);
    if (a.count_nonzero() == 0 || b.count_nonzero() == 0) {continue;}
    const double h = hd95(a, b, s);
    EXPECT_EQ(h, hd95(b, a, s));
    EXPECT_NEAR(hd95(a, b, {1.4, 1.8, 2.6}), 2.0 * h, 1e-12 * std::max(1.0, h));
  }
}

TEST(Hd95, ShapeMismatchAndBadSpacing)
{
  const auto a = Volume::filled({2, 2, 2}, {1, 1, 1}, {0, 0, 0}, VolumeKind::label, 1.0f);
  const auto b = Volume::filled({2, 2, 3}, {1, 1, 1}, {0, 0, 0}, VolumeKind::label, 1.0f);
  EXPECT_THROW(hd95(a, b, {1, 1, 1}), ShapeError);
  EXPECT_THROW(hd95(a, a, {1, 0, 1}), InvalidArgument);
}

TEST(Boundary, SolidCubeInteriorExcluded)
{
  const auto cube = make_label({5, 5, 5}, [](Index, Index, Index) {return true;});
  // Everything except the 3x3x3 interior touches the volume edge.
  EXPECT_EQ(boundary_voxels(cube).size(), 125u - 27u);
}

TEST(LargestComponent, SingleComponentUnchanged)
{
  const auto b = testutil::ball(9, 3.0);
  EXPECT_EQ(largest_component(b).values(), b.values());
}

TEST(LargestComponent, RemovesSmallerComponent)
{
  // A 10-voxel bar and a 3-voxel bar, separated by more than one voxel.
  const auto m = make_label({12, 6, 6}, [](Index i, Index j, Index k) {
        return (j == 1 && k == 1 && i < 10) || (j == 4 && k == 4 && i < 3);
      });
  ASSERT_EQ(component_sizes(m), (std::vector<Index>{10, 3}));
  const auto r = largest_component(m);
  EXPECT_EQ(component_sizes(r), (std::vector<Index>{10}));
  EXPECT_EQ(r.count_nonzero(), 10);
  EXPECT_EQ(r.at(0, 1, 1), 1.0f);
  EXPECT_EQ(r.at(0, 4, 4), 0.0f);
  EXPECT_EQ(count_components(m), 2);
}

TEST(LargestComponent, DiagonalNeighboursConnect)
{
  const auto m = make_label({3, 3, 3}, [](Index i, Index j, Index k) {return i == j && j == k;});
  EXPECT_EQ(count_components(m), 1);
  EXPECT_EQ(largest_component(m).count_nonzero(), 3);
}

TEST(LargestComponent, TieGoesToLowestLinearIndex)
{
  const auto m = make_label({6, 1, 1}, [](Index i, Index, Index) {return i == 0 || i == 1 || i == 4 || i == 5;});
  const auto r = largest_component(m);
  EXPECT_EQ(r.values(), (std::vector<float>{1, 1, 0, 0, 0, 0}));
}

TEST(LargestComponent, EmptyMaskReturnedUnchanged)
{
  const auto e = Volume::filled({3, 3, 3}, {1, 1, 1}, {0, 0, 0}, VolumeKind::label);
  EXPECT_EQ(largest_component(e).count_nonzero(), 0);
}

TEST(LargestComponent, MatchesFloodFillOnRandomMasks)
{
  std::mt19937_64 rng(6);
  for (int t = 0; t < 40; ++t) {
    const auto m = random_mask(rng, {7, 6, 5}, 0.12);
    const auto sizes = component_sizes(m);
    EXPECT_EQ(count_components(m), static_cast<Index>(sizes.size()));
    const auto r = largest_component(m);
    EXPECT_EQ(r.count_nonzero(), sizes.empty() ? 0 : sizes[0]);
    EXPECT_EQ(count_components(r), sizes.empty() ? 0 : 1);
    for (Index v = 0; v < m.size(); ++v) {
      if (r[v] != 0.0f) {EXPECT_NE(m[v], 0.0f);}
    }
  }
}

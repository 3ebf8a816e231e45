#ifndef AORTASEG_RESAMPLE_HPP_
#define AORTASEG_RESAMPLE_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "aortaseg/volume.hpp"

namespace aortaseg
{

enum class Interpolation
{
  trilinear,
  nearest,
};

namespace detail
{

struct AxisSample
{
  Index lo;
  Index hi;
  double frac;
};

/// Per-axis sample positions for output index j mapped to input index j * ratio,
/// clamped to the input extent.
inline std::vector<AxisSample> axis_samples(Index n_out, Index n_in, double ratio)
{
  std::vector<AxisSample> out(static_cast<std::size_t>(n_out));
  const double last = static_cast<double>(n_in - 1);
  for (Index j = 0; j < n_out; ++j) {
    double c = static_cast<double>(j) * ratio;
    c = std::clamp(c, 0.0, last);
    const Index lo = static_cast<Index>(std::floor(c));
    const Index hi = std::min(lo + 1, n_in - 1);
    out[j] = {lo, hi, c - static_cast<double>(lo)};
  }
  return out;
}

inline Index nearest_of(const AxisSample & s)
{
  return s.frac >= 0.5 ? s.hi : s.lo;
}

}  // namespace detail

/**
 * @brief Resample onto an explicit grid sharing the input origin.
 *
 * Output voxel j along axis a samples the input at continuous index
 * j * out_spacing[a] / in_spacing[a]; samples outside the input are clamped
 * to the edge.
 */
inline Volume resample_to_grid(
  const Volume & vol, Shape3 out_shape, Vec3 out_spacing, Interpolation mode)
{
  check_spacing(out_spacing, "target spacing");
  std::array<std::vector<detail::AxisSample>, 3> ax;
  for (int a = 0; a < 3; ++a) {
    if (out_shape[a] < 1) {throw ShapeError("output shape must be >= 1 on every axis");}
    ax[a] = detail::axis_samples(out_shape[a], vol.shape()[a], out_spacing[a] / vol.spacing()[a]);
  }

  std::vector<float> out(static_cast<std::size_t>(product(out_shape)));
  const auto & in = vol.values();
  const Index ny = vol.shape()[1];
  const Index nz = vol.shape()[2];
  auto lin = [&](Index i, Index j, Index k) {return (i * ny + j) * nz + k;};

  Index o = 0;
  for (Index i = 0; i < out_shape[0]; ++i) {
    const auto & si = ax[0][i];
    for (Index j = 0; j < out_shape[1]; ++j) {
      const auto & sj = ax[1][j];
      for (Index k = 0; k < out_shape[2]; ++k, ++o) {
        const auto & sk = ax[2][k];
        if (mode == Interpolation::nearest) {
          out[o] = in[lin(detail::nearest_of(si), detail::nearest_of(sj), detail::nearest_of(sk))];
          continue;
        }
        const double fx = si.frac;
        const double fy = sj.frac;
        const double fz = sk.frac;
        auto lerp_z = [&](Index x, Index y) {
            const double a = in[lin(x, y, sk.lo)];
            if (fz == 0.0) {return a;}
            return (1.0 - fz) * a + fz * static_cast<double>(in[lin(x, y, sk.hi)]);
          };
        auto lerp_yz = [&](Index x) {
            const double a = lerp_z(x, sj.lo);
            if (fy == 0.0) {return a;}
            return (1.0 - fy) * a + fy * lerp_z(x, sj.hi);
          };
        double v = lerp_yz(si.lo);
        if (fx != 0.0) {
          v = (1.0 - fx) * v + fx * lerp_yz(si.hi);
        }
        out[o] = static_cast<float>(v);
      }
    }
  }
  return Volume(out_shape, out_spacing, vol.origin(), vol.kind(), std::move(out));
}

/// Output extent along each axis for a spacing change.
inline Shape3 resampled_shape(const Shape3 & shape, const Vec3 & spacing, const Vec3 & target)
{
  Shape3 out{};
  for (int a = 0; a < 3; ++a) {
    out[a] = std::max<Index>(
      1, round_half_up(static_cast<double>(shape[a]) * spacing[a] / target[a]));
  }
  return out;
}

/**
 * @brief Resample to a new voxel spacing.
 *
 * Images use trilinear interpolation, labels nearest neighbour. The origin is kept.
 */
inline Volume resample(const Volume & vol, const Vec3 & target_spacing)
{
  check_spacing(target_spacing, "target spacing");
  const auto mode = vol.kind() == VolumeKind::label ? Interpolation::nearest :
    Interpolation::trilinear;
  if (vol.spacing() == target_spacing) {
    return vol;
  }
  return resample_to_grid(
    vol, resampled_shape(vol.shape(), vol.spacing(), target_spacing), target_spacing, mode);
}

}  // namespace aortaseg

#endif  // AORTASEG_RESAMPLE_HPP_

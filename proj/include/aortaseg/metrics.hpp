#ifndef AORTASEG_METRICS_HPP_
#define AORTASEG_METRICS_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "aortaseg/percentile.hpp"
#include "aortaseg/volume.hpp"

namespace aortaseg
{

/// Sentinel HD95 when exactly one of the two masks is empty.
inline constexpr double kHd95Infinite = std::numeric_limits<double>::infinity();

struct EvalResult
{
  std::string case_id;
  double dice = 0.0;
  double hd95 = 0.0;
};

/// 2|P and G| / (|P| + |G|); two empty masks score 1.
inline double dice_score(const Volume & pred, const Volume & gt)
{
  require_same_grid(pred, gt, "dice_score");
  Index inter = 0;
  Index np = 0;
  Index ng = 0;
  const auto & p = pred.values();
  const auto & g = gt.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool a = p[i] != 0.0f;
    const bool b = g[i] != 0.0f;
    np += a;
    ng += b;
    inter += a && b;
  }
  if (np + ng == 0) {return 1.0;}
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

/// Foreground voxels with a face neighbour that is background or outside the volume.
inline std::vector<Index> boundary_voxels(const Volume & mask)
{
  const auto & s = mask.shape();
  std::vector<Index> out;
  for (Index i = 0; i < s[0]; ++i) {
    for (Index j = 0; j < s[1]; ++j) {
      for (Index k = 0; k < s[2]; ++k) {
        if (mask.at(i, j, k) == 0.0f) {continue;}
        const bool edge = i == 0 || j == 0 || k == 0 || i == s[0] - 1 || j == s[1] - 1 || k == s[2] - 1;
        if (edge || mask.at(i - 1, j, k) == 0.0f || mask.at(i + 1, j, k) == 0.0f ||
          mask.at(i, j - 1, k) == 0.0f || mask.at(i, j + 1, k) == 0.0f ||
          mask.at(i, j, k - 1) == 0.0f || mask.at(i, j, k + 1) == 0.0f)
        {
          out.push_back(mask.index(i, j, k));
        }
      }
    }
  }
  return out;
}

/// Squared physical distance for an integer voxel offset, in the one association order
/// shared by the transform and any reference computation.
inline double offset_distance_sq(Index dx, Index dy, Index dz, const Vec3 & spacing)
{
  const double a = static_cast<double>(dx) * spacing[0];
  const double b = static_cast<double>(dy) * spacing[1];
  const double c = static_cast<double>(dz) * spacing[2];
  return (a * a + b * b) + c * c;
}

namespace detail
{

/// f_out[q] = min_p f_in[p] + ((q - p) h)^2 along one line, exact.
/// Scans outward from q and stops once the offset term alone reaches the best value.
inline void min_plus_line(const double * f, Index n, Index stride, double h, double * out)
{
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (Index q = 0; q < n; ++q) {
    double best = f[q * stride];
    for (Index d = 1; d < n; ++d) {
      const double hd = static_cast<double>(d) * h;
      const double pen = hd * hd;
      if (pen >= best) {break;}
      if (q - d >= 0) {
        const double v = f[(q - d) * stride];
        if (v != inf) {best = std::min(best, v + pen);}
      }
      if (q + d < n) {
        const double v = f[(q + d) * stride];
        if (v != inf) {best = std::min(best, v + pen);}
      }
      if (q - d < 0 && q + d >= n) {break;}
    }
    out[q] = best;
  }
}

}  // namespace detail

/**
 * @brief Squared Euclidean distance (mm^2) from every voxel to the nearest seed voxel.
 *
 * Separable exact transform: axis x, then y, then z. Each pass is an exact
 * lower envelope by pruned scan, so every value equals offset_distance_sq of
 * some seed offset bit for bit. Returns +inf everywhere when there are no seeds.
 */
inline std::vector<double> squared_distance_transform(
  const Shape3 & shape, const std::vector<Index> & seeds, const Vec3 & spacing)
{
  constexpr double inf = std::numeric_limits<double>::infinity();
  const Index nx = shape[0];
  const Index ny = shape[1];
  const Index nz = shape[2];
  std::vector<double> f(static_cast<std::size_t>(nx * ny * nz), inf);
  for (Index s : seeds) {f[s] = 0.0;}
  if (seeds.empty()) {return f;}

  const Index stride[3] = {ny * nz, nz, 1};
  const Index n_axis[3] = {nx, ny, nz};
  std::vector<double> line_in;
  std::vector<double> line_out;
  for (int axis = 0; axis < 3; ++axis) {
    const Index n = n_axis[axis];
    line_in.resize(static_cast<std::size_t>(n));
    line_out.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < nx; ++i) {
      if (axis == 0 && i > 0) {break;}
      for (Index j = 0; j < ny; ++j) {
        if (axis == 1 && j > 0) {break;}
        for (Index k = 0; k < nz; ++k) {
          if (axis == 2 && k > 0) {break;}
          const Index base = (i * ny + j) * nz + k;
          for (Index q = 0; q < n; ++q) {line_in[q] = f[base + q * stride[axis]];}
          detail::min_plus_line(line_in.data(), n, 1, spacing[axis], line_out.data());
          for (Index q = 0; q < n; ++q) {f[base + q * stride[axis]] = line_out[q];}
        }
      }
    }
  }
  return f;
}

/// Distances (mm) from each voxel in @p from to the nearest voxel of the transform's seed set.
inline std::vector<double> directed_surface_distances(
  const std::vector<Index> & from, const std::vector<double> & dt_sq)
{
  std::vector<double> d;
  d.reserve(from.size());
  for (Index v : from) {d.push_back(std::sqrt(dt_sq[v]));}
  return d;
}

/**
 * @brief 95th-percentile symmetric Hausdorff distance between mask boundaries, in mm.
 *
 * Boundaries are face-adjacency boundary voxels at voxel centres. Both masks
 * empty gives 0; exactly one empty gives kHd95Infinite.
 */
inline double hd95(const Volume & pred, const Volume & gt, const Vec3 & spacing)
{
  if (pred.shape() != gt.shape()) {
    throw ShapeError("hd95: shape mismatch " + to_string(pred.shape()) + " vs " + to_string(gt.shape()));
  }
  check_spacing(spacing);
  const auto bp = boundary_voxels(pred);
  const auto bg = boundary_voxels(gt);
  if (bp.empty() && bg.empty()) {return 0.0;}
  if (bp.empty() || bg.empty()) {return kHd95Infinite;}
  auto d_pg = directed_surface_distances(bp, squared_distance_transform(gt.shape(), bg, spacing));
  auto d_gp = directed_surface_distances(bg, squared_distance_transform(pred.shape(), bp, spacing));
  return std::max(percentile_inplace(d_pg, 95.0), percentile_inplace(d_gp, 95.0));
}

inline double hd95(const Volume & pred, const Volume & gt)
{
  return hd95(pred, gt, gt.spacing());
}

/**
 * @brief Keep only the largest 26-connected foreground component.
 *
 * Ties go to the component whose lowest linear index is smallest. Empty masks
 * are returned unchanged.
 */
inline Volume largest_component(const Volume & mask)
{
  const auto & s = mask.shape();
  const Index N = mask.size();
  std::vector<std::int32_t> comp(static_cast<std::size_t>(N), -1);
  std::vector<Index> sizes;
  std::vector<Index> stack;
  for (Index start = 0; start < N; ++start) {
    if (mask[start] == 0.0f || comp[start] >= 0) {continue;}
    const auto id = static_cast<std::int32_t>(sizes.size());
    Index count = 0;
    comp[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const Index v = stack.back();
      stack.pop_back();
      ++count;
      const Index i = v / (s[1] * s[2]);
      const Index j = (v / s[2]) % s[1];
      const Index k = v % s[2];
      for (Index di = -1; di <= 1; ++di) {
        const Index a = i + di;
        if (a < 0 || a >= s[0]) {continue;}
        for (Index dj = -1; dj <= 1; ++dj) {
          const Index b = j + dj;
          if (b < 0 || b >= s[1]) {continue;}
          for (Index dk = -1; dk <= 1; ++dk) {
            const Index c = k + dk;
            if (c < 0 || c >= s[2]) {continue;}
            const Index u = (a * s[1] + b) * s[2] + c;
            if (mask[u] != 0.0f && comp[u] < 0) {
              comp[u] = id;
              stack.push_back(u);
            }
          }
        }
      }
    }
    sizes.push_back(count);
  }
  if (sizes.size() <= 1) {return mask;}
  // Components are numbered in order of their lowest linear index.
  const auto best = static_cast<std::int32_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  std::vector<float> out(static_cast<std::size_t>(N), 0.0f);
  for (Index v = 0; v < N; ++v) {
    if (comp[v] == best) {out[v] = mask[v];}
  }
  return mask.with_data(std::move(out));
}

/// Number of 26-connected foreground components.
inline Index count_components(const Volume & mask)
{
  const auto & s = mask.shape();
  const Index N = mask.size();
  std::vector<char> seen(static_cast<std::size_t>(N), 0);
  std::vector<Index> stack;
  Index n = 0;
  for (Index start = 0; start < N; ++start) {
    if (mask[start] == 0.0f || seen[start]) {continue;}
    ++n;
    seen[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const Index v = stack.back();
      stack.pop_back();
      const Index i = v / (s[1] * s[2]);
      const Index j = (v / s[2]) % s[1];
      const Index k = v % s[2];
      for (Index a = std::max<Index>(0, i - 1); a <= std::min(s[0] - 1, i + 1); ++a) {
        for (Index b = std::max<Index>(0, j - 1); b <= std::min(s[1] - 1, j + 1); ++b) {
          for (Index c = std::max<Index>(0, k - 1); c <= std::min(s[2] - 1, k + 1); ++c) {
            const Index u = (a * s[1] + b) * s[2] + c;
            if (mask[u] != 0.0f && !seen[u]) {
              seen[u] = 1;
              stack.push_back(u);
            }
          }
        }
      }
    }
  }
  return n;
}

/// Binary mask of voxels equal to @p cls.
inline Volume binarize(const Volume & label, float cls = 1.0f)
{
  std::vector<float> out(static_cast<std::size_t>(label.size()));
  for (Index i = 0; i < label.size(); ++i) {out[i] = label[i] == cls ? 1.0f : 0.0f;}
  return label.with_data(std::move(out), VolumeKind::label);
}

}  // namespace aortaseg

#endif  // AORTASEG_METRICS_HPP_

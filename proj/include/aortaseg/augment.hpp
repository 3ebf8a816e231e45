#ifndef AORTASEG_AUGMENT_HPP_
#define AORTASEG_AUGMENT_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

#include "aortaseg/volume.hpp"

namespace aortaseg
{

using Rng = std::mt19937_64;

struct AugmentConfig
{
  Shape3 crop_size{64, 64, 64};
  /// Probability that a crop is forced to contain a foreground voxel (0 disables).
  double foreground_crop_prob = 0.5;
  double p_flip = 0.5;
  double p_affine = 0.5;
  double rotation_deg = 15.0;
  double scale_min = 0.9;
  double scale_max = 1.1;
  double p_intensity_scale = 0.2;
  double intensity_scale = 0.1;
  double p_intensity_shift = 0.2;
  double intensity_shift = 0.1;
  double p_noise = 0.2;
  double noise_std = 0.05;
  double p_blur = 0.2;
  double blur_sigma_min = 0.5;
  double blur_sigma_max = 1.0;
  std::uint64_t seed = 0;

  void validate() const
  {
    for (Index c : crop_size) {
      if (c < 1) {throw InvalidArgument("crop_size must be >= 1 on every axis");}
    }
    for (double p : {foreground_crop_prob, p_flip, p_affine, p_intensity_scale, p_intensity_shift,
        p_noise, p_blur})
    {
      if (!(p >= 0.0 && p <= 1.0)) {throw InvalidArgument("augmentation probabilities must be in [0, 1]");}
    }
    if (!(scale_min > 0.0 && scale_min <= scale_max)) {throw InvalidArgument("invalid affine scale range");}
    if (!(blur_sigma_min > 0.0 && blur_sigma_min <= blur_sigma_max)) {
      throw InvalidArgument("invalid blur sigma range");
    }
  }

  /// Every random transform switched off.
  static AugmentConfig disabled(Shape3 crop)
  {
    AugmentConfig c;
    c.crop_size = crop;
    c.foreground_crop_prob = 0.0;
    c.p_flip = c.p_affine = c.p_intensity_scale = c.p_intensity_shift = c.p_noise = c.p_blur = 0.0;
    return c;
  }
};

namespace detail
{

inline bool coin(Rng & rng, double p)
{
  if (p <= 0.0) {return false;}
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

inline double uniform(Rng & rng, double lo, double hi)
{
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Index uniform_index(Rng & rng, Index lo, Index hi)
{
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

/// Symmetric constant padding up to at least @p target per axis.
inline Volume pad_to(const Volume & v, const Shape3 & target)
{
  const auto & s = v.shape();
  Shape3 out{};
  Shape3 before{};
  bool needed = false;
  for (int a = 0; a < 3; ++a) {
    out[a] = std::max(s[a], target[a]);
    before[a] = (out[a] - s[a]) / 2;
    needed = needed || out[a] != s[a];
  }
  if (!needed) {return v;}
  std::vector<float> data(static_cast<std::size_t>(product(out)), 0.0f);
  for (Index i = 0; i < s[0]; ++i) {
    for (Index j = 0; j < s[1]; ++j) {
      for (Index k = 0; k < s[2]; ++k) {
        data[((i + before[0]) * out[1] + j + before[1]) * out[2] + k + before[2]] = v.at(i, j, k);
      }
    }
  }
  return Volume(out, v.spacing(), v.origin(), v.kind(), std::move(data));
}

}  // namespace detail

/// Copy of the window [start, start + size).
inline Volume crop(const Volume & v, const Shape3 & start, const Shape3 & size)
{
  for (int a = 0; a < 3; ++a) {
    if (start[a] < 0 || start[a] + size[a] > v.shape()[a]) {throw ShapeError("crop window outside volume");}
  }
  std::vector<float> data(static_cast<std::size_t>(product(size)));
  Index o = 0;
  for (Index i = 0; i < size[0]; ++i) {
    for (Index j = 0; j < size[1]; ++j) {
      const float * src = v.values().data() + v.index(start[0] + i, start[1] + j, start[2]);
      std::copy(src, src + size[2], data.begin() + o);
      o += size[2];
    }
  }
  Vec3 origin = v.origin();
  for (int a = 0; a < 3; ++a) {origin[a] += static_cast<double>(start[a]) * v.spacing()[a];}
  return Volume(size, v.spacing(), origin, v.kind(), std::move(data));
}

/**
 * @brief Same random window from image and label.
 *
 * Volumes smaller than the crop are padded symmetrically with zeros. With
 * probability @p foreground_prob, and when the label has foreground, the
 * window is drawn uniformly among those containing a randomly chosen
 * foreground voxel.
 */
inline std::pair<Volume, Volume> random_crop_pair(
  const Volume & image, const Volume & label, const Shape3 & crop_size, Rng & rng,
  double foreground_prob = 0.5)
{
  if (image.shape() != label.shape()) {
    throw ShapeError("random_crop_pair: image " + to_string(image.shape()) + " and label " +
            to_string(label.shape()) + " differ");
  }
  const Volume img = detail::pad_to(image, crop_size);
  const Volume lab = detail::pad_to(label, crop_size);
  const auto & s = img.shape();
  Shape3 start{};
  const bool biased = detail::coin(rng, foreground_prob);
  std::vector<Index> fg;
  if (biased) {
    for (Index v = 0; v < lab.size(); ++v) {
      if (lab[v] != 0.0f) {fg.push_back(v);}
    }
  }
  if (!fg.empty()) {
    const Index v = fg[static_cast<std::size_t>(detail::uniform_index(rng, 0, static_cast<Index>(fg.size()) - 1))];
    const Shape3 c{v / (s[1] * s[2]), (v / s[2]) % s[1], v % s[2]};
    for (int a = 0; a < 3; ++a) {
      const Index lo = std::max<Index>(0, c[a] - crop_size[a] + 1);
      const Index hi = std::min<Index>(c[a], s[a] - crop_size[a]);
      start[a] = detail::uniform_index(rng, lo, hi);
    }
  } else {
    for (int a = 0; a < 3; ++a) {start[a] = detail::uniform_index(rng, 0, s[a] - crop_size[a]);}
  }
  return {crop(img, start, crop_size), crop(lab, start, crop_size)};
}

inline Volume flip(const Volume & v, int axis)
{
  const auto & s = v.shape();
  std::vector<float> data(static_cast<std::size_t>(v.size()));
  for (Index i = 0; i < s[0]; ++i) {
    for (Index j = 0; j < s[1]; ++j) {
      for (Index k = 0; k < s[2]; ++k) {
        const Index si = axis == 0 ? s[0] - 1 - i : i;
        const Index sj = axis == 1 ? s[1] - 1 - j : j;
        const Index sk = axis == 2 ? s[2] - 1 - k : k;
        data[v.index(i, j, k)] = v.at(si, sj, sk);
      }
    }
  }
  return v.with_data(std::move(data));
}

using Mat3 = std::array<std::array<double, 3>, 3>;

/// R = Rz * Ry * Rx for angles in radians.
inline Mat3 rotation_matrix(const Vec3 & angles)
{
  const double cx = std::cos(angles[0]), sx = std::sin(angles[0]);
  const double cy = std::cos(angles[1]), sy = std::sin(angles[1]);
  const double cz = std::cos(angles[2]), sz = std::sin(angles[2]);
  const Mat3 rx{{{1, 0, 0}, {0, cx, -sx}, {0, sx, cx}}};
  const Mat3 ry{{{cy, 0, sy}, {0, 1, 0}, {-sy, 0, cy}}};
  const Mat3 rz{{{cz, -sz, 0}, {sz, cz, 0}, {0, 0, 1}}};
  auto mul = [](const Mat3 & a, const Mat3 & b) {
      Mat3 r{};
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          for (int k = 0; k < 3; ++k) {r[i][j] += a[i][k] * b[k][j];}
        }
      }
      return r;
    };
  return mul(rz, mul(ry, rx));
}

/**
 * @brief Rotate and scale about the volume centre in voxel index space.
 *
 * Output voxel p samples the input at c + R^T (p - c) / scale; labels use
 * nearest neighbour, images trilinear, both with edge clamping.
 */
inline Volume affine_transform(const Volume & v, const Vec3 & angles, double scale)
{
  const Mat3 r = rotation_matrix(angles);
  const auto & s = v.shape();
  const Vec3 c{(s[0] - 1) / 2.0, (s[1] - 1) / 2.0, (s[2] - 1) / 2.0};
  const bool nearest = v.kind() == VolumeKind::label;
  auto snap = [](double x) {
      const double rx = std::round(x);
      return std::abs(x - rx) < 1e-6 ? rx : x;
    };
  std::vector<float> data(static_cast<std::size_t>(v.size()));
  for (Index i = 0; i < s[0]; ++i) {
    for (Index j = 0; j < s[1]; ++j) {
      for (Index k = 0; k < s[2]; ++k) {
        const double d[3] = {i - c[0], j - c[1], k - c[2]};
        double q[3];
        for (int a = 0; a < 3; ++a) {
          const double t = r[0][a] * d[0] + r[1][a] * d[1] + r[2][a] * d[2];
          q[a] = std::clamp(snap(c[a] + t / scale), 0.0, static_cast<double>(s[a] - 1));
        }
        float val;
        if (nearest) {
          val = v.at(static_cast<Index>(std::floor(q[0] + 0.5)), static_cast<Index>(std::floor(q[1] + 0.5)),
              static_cast<Index>(std::floor(q[2] + 0.5)));
        } else {
          Index lo[3];
          Index hi[3];
          double f[3];
          for (int a = 0; a < 3; ++a) {
            lo[a] = static_cast<Index>(std::floor(q[a]));
            hi[a] = std::min(lo[a] + 1, s[a] - 1);
            f[a] = q[a] - static_cast<double>(lo[a]);
          }
          double acc = 0.0;
          for (int corner = 0; corner < 8; ++corner) {
            double w = 1.0;
            Index idx[3];
            for (int a = 0; a < 3; ++a) {
              const bool up = (corner >> a) & 1;
              w *= up ? f[a] : 1.0 - f[a];
              idx[a] = up ? hi[a] : lo[a];
            }
            if (w != 0.0) {acc += w * v.at(idx[0], idx[1], idx[2]);}
          }
          val = static_cast<float>(acc);
        }
        data[v.index(i, j, k)] = val;
      }
    }
  }
  return v.with_data(std::move(data));
}

/// Separable Gaussian smoothing with edge clamping, radius ceil(3 sigma).
inline Volume gaussian_blur(const Volume & v, double sigma)
{
  const Index radius = std::max<Index>(1, static_cast<Index>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (Index t = -radius; t <= radius; ++t) {
    kernel[t + radius] = std::exp(-0.5 * (t * t) / (sigma * sigma));
    sum += kernel[t + radius];
  }
  for (auto & w : kernel) {w /= sum;}
  const auto & s = v.shape();
  std::vector<float> cur(v.values());
  std::vector<float> next(cur.size());
  const Index stride[3] = {s[1] * s[2], s[2], 1};
  for (int axis = 0; axis < 3; ++axis) {
    for (Index i = 0; i < s[0]; ++i) {
      for (Index j = 0; j < s[1]; ++j) {
        for (Index k = 0; k < s[2]; ++k) {
          const Index pos = axis == 0 ? i : (axis == 1 ? j : k);
          const Index base = v.index(i, j, k) - pos * stride[axis];
          double acc = 0.0;
          for (Index t = -radius; t <= radius; ++t) {
            const Index q = std::clamp<Index>(pos + t, 0, s[axis] - 1);
            acc += kernel[t + radius] * cur[base + q * stride[axis]];
          }
          next[v.index(i, j, k)] = static_cast<float>(acc);
        }
      }
    }
    std::swap(cur, next);
  }
  return v.with_data(std::move(cur));
}

/**
 * @brief Random flips and affine applied identically to both volumes, then
 * intensity scale, shift, noise and blur applied to the image only.
 */
inline std::pair<Volume, Volume> apply_augmentations(
  const Volume & image, const Volume & label, const AugmentConfig & cfg, Rng & rng)
{
  if (image.shape() != label.shape()) {
    throw ShapeError("apply_augmentations: image and label shapes differ");
  }
  Volume img = image;
  Volume lab = label;
  for (int axis = 0; axis < 3; ++axis) {
    if (detail::coin(rng, cfg.p_flip)) {
      img = flip(img, axis);
      lab = flip(lab, axis);
    }
  }
  if (detail::coin(rng, cfg.p_affine)) {
    const double max_rad = cfg.rotation_deg * std::numbers::pi / 180.0;
    Vec3 angles{};
    for (auto & a : angles) {a = detail::uniform(rng, -max_rad, max_rad);}
    const double scale = detail::uniform(rng, cfg.scale_min, cfg.scale_max);
    img = affine_transform(img, angles, scale);
    lab = affine_transform(lab, angles, scale);
  }
  std::vector<float> x(img.values());
  bool changed = false;
  if (detail::coin(rng, cfg.p_intensity_scale)) {
    const double f = 1.0 + detail::uniform(rng, -cfg.intensity_scale, cfg.intensity_scale);
    for (auto & v : x) {v = static_cast<float>(v * f);}
    changed = true;
  }
  if (detail::coin(rng, cfg.p_intensity_shift)) {
    const double off = detail::uniform(rng, -cfg.intensity_shift, cfg.intensity_shift);
    for (auto & v : x) {v = static_cast<float>(v + off);}
    changed = true;
  }
  if (detail::coin(rng, cfg.p_noise)) {
    std::normal_distribution<double> noise(0.0, cfg.noise_std);
    for (auto & v : x) {v = static_cast<float>(v + noise(rng));}
    changed = true;
  }
  if (changed) {img = img.with_data(std::move(x));}
  if (detail::coin(rng, cfg.p_blur)) {
    img = gaussian_blur(img, detail::uniform(rng, cfg.blur_sigma_min, cfg.blur_sigma_max));
  }
  return {std::move(img), std::move(lab)};
}

}  // namespace aortaseg

#endif  // AORTASEG_AUGMENT_HPP_

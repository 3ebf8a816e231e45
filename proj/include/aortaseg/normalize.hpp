#ifndef AORTASEG_NORMALIZE_HPP_
#define AORTASEG_NORMALIZE_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "aortaseg/percentile.hpp"
#include "aortaseg/volume.hpp"

namespace aortaseg
{

/// Preprocessing a model was trained under.
enum class NormalizationMode
{
  zscore,
  percentile_softclip,
};

inline const char * to_string(NormalizationMode m)
{
  return m == NormalizationMode::zscore ? "zscore" : "percentile_softclip";
}

inline NormalizationMode normalization_mode_from_string(const std::string & s)
{
  if (s == "zscore") {return NormalizationMode::zscore;}
  if (s == "percentile_softclip") {return NormalizationMode::percentile_softclip;}
  throw InvalidArgument("unknown normalization mode '" + s + "'");
}

struct PercentileBounds
{
  double lo = 0.0;
  double hi = 1.0;
};

/**
 * @brief Global zero-mean, unit-variance scaling (population standard deviation).
 *
 * A constant image has no scale; it maps to all zeros and a warning is emitted.
 */
inline Volume zscore_normalize(const Volume & vol)
{
  if (vol.kind() != VolumeKind::image) {throw InvalidArgument("zscore_normalize expects an image volume");}
  const auto & x = vol.values();
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (float v : x) {mean += v;}
  mean /= n;
  double ss = 0.0;
  for (float v : x) {
    const double d = v - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / n);
  std::vector<float> out(x.size(), 0.0f);
  if (!(sd > 0.0) || !std::isfinite(sd)) {
    warn("zscore_normalize: image has zero intensity variance; returning zeros");
    return vol.with_data(std::move(out));
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<float>((x[i] - mean) / sd);
  }
  return vol.with_data(std::move(out));
}

/// Percentile bounds of image intensities where mask == 1.
inline PercentileBounds foreground_percentile_bounds(
  const Volume & vol, const Volume & mask, double p_lo, double p_hi)
{
  if (vol.shape() != mask.shape()) {
    throw ShapeError("foreground_percentile_bounds: image " + to_string(vol.shape()) +
            " and mask " + to_string(mask.shape()) + " differ");
  }
  if (!(p_lo >= 0.0 && p_hi <= 100.0 && p_lo < p_hi)) {
    throw InvalidArgument("percentiles must satisfy 0 <= p_lo < p_hi <= 100");
  }
  std::vector<float> fg;
  const auto & m = mask.values();
  const auto & x = vol.values();
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] == 1.0f) {fg.push_back(x[i]);}
  }
  if (fg.empty()) {
    throw EmptyForeground("foreground mask is empty; stage-1 segmentation found no foreground");
  }
  PercentileBounds b;
  b.lo = percentile_inplace(fg, p_lo);
  b.hi = percentile_inplace(fg, p_hi);
  return b;
}

/// Numerically stable log(1 + e^x).
inline double softplus(double x)
{
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

/**
 * @brief Smooth clamp of v to (0, 1).
 *
 * S_k(v) = (1/k) ln((1 + e^{kv}) / (1 + e^{k(v-1)})), the integral of the
 * difference of two logistic sigmoids. S_k(v) + S_k(1 - v) = 1 and S_k
 * approaches clamp(v, 0, 1) as k grows.
 */
inline double softclip(double v, double k)
{
  return (softplus(k * v) - softplus(k * (v - 1.0))) / k;
}

/// Map [lo, hi] to [0, 1] globally, then apply the smooth clamp.
inline Volume softclip_rescale(const Volume & vol, const PercentileBounds & b, double k)
{
  if (!(std::isfinite(b.lo) && std::isfinite(b.hi))) {throw InvalidArgument("bounds must be finite");}
  if (!(b.lo < b.hi)) {
    throw InvalidArgument("softclip_rescale: degenerate intensity range lo=" +
            std::to_string(b.lo) + " hi=" + std::to_string(b.hi));
  }
  if (!(k > 0.0)) {throw InvalidArgument("softclip steepness must be positive");}
  const double scale = 1.0 / (b.hi - b.lo);
  const auto & x = vol.values();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<float>(softclip((x[i] - b.lo) * scale, k));
  }
  return vol.with_data(std::move(out), VolumeKind::image);
}

}  // namespace aortaseg

#endif  // AORTASEG_NORMALIZE_HPP_

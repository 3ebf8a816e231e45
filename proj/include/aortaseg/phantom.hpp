#ifndef AORTASEG_PHANTOM_HPP_
#define AORTASEG_PHANTOM_HPP_

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "aortaseg/io.hpp"
#include "aortaseg/train.hpp"
#include "aortaseg/volume.hpp"

namespace aortaseg
{

/**
 * @brief Synthetic CT-like vessel: a curved, tapering tube with an optional side branch.
 *
 * Geometry is in voxel units. The centreline runs along z and is displaced in
 * the axial plane by a sinusoid; the radius tapers linearly from radius_top at
 * the first vessel slice to radius_bottom at the last.
 */
struct PhantomSpec
{
  Shape3 shape{64, 64, 64};
  Vec3 spacing{0.7, 0.7, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};
  /// Centreline offset from the volume centre in (x, y).
  std::array<double, 2> center_offset{0.0, 0.0};
  /// Sinusoid amplitude in (x, y); zero gives a straight tube.
  std::array<double, 2> amplitude{3.0, 2.0};
  /// Period along z in voxels.
  double period = 64.0;
  double phase = 0.0;
  double radius_top = 6.0;
  double radius_bottom = 3.0;
  /// Empty voxels kept between the vessel and every face of the volume.
  Index margin = 2;

  bool branch = false;
  /// Fraction of the vessel length at which the branch leaves the main tube.
  double branch_position = 0.45;
  /// In-plane direction of the branch, radians.
  double branch_angle = 0.0;
  double branch_length = 14.0;
  double branch_radius = 2.5;

  double background_mean = 40.0;
  double background_std = 15.0;
  double vessel_mean = 300.0;
  double vessel_std = 20.0;
  /// Applied last: image = scale * intensity + offset.
  double intensity_scale = 1.0;
  double intensity_offset = 0.0;
  std::uint64_t seed = 0;

  Index z_first() const noexcept {return margin;}
  Index z_last() const noexcept {return shape[2] - 1 - margin;}

  double radius_at(double z) const
  {
    const double t = (z - static_cast<double>(z_first())) / static_cast<double>(std::max<Index>(1, z_last() - z_first()));
    return radius_top + t * (radius_bottom - radius_top);
  }

  std::array<double, 2> centerline_at(double z) const
  {
    const double w = 2.0 * std::numbers::pi * z / period + phase;
    return {
      0.5 * static_cast<double>(shape[0] - 1) + center_offset[0] + amplitude[0] * std::sin(w),
      0.5 * static_cast<double>(shape[1] - 1) + center_offset[1] + amplitude[1] * std::sin(w),
    };
  }

  /// Branch segment endpoints in voxel coordinates.
  std::pair<Vec3, Vec3> branch_segment() const
  {
    const double z0 = static_cast<double>(z_first()) + branch_position * static_cast<double>(z_last() - z_first());
    const auto c = centerline_at(z0);
    const Vec3 a{c[0], c[1], z0};
    // Leaves at 45 degrees towards larger z.
    const double h = branch_length / std::numbers::sqrt2;
    const Vec3 b{a[0] + h * std::cos(branch_angle), a[1] + h * std::sin(branch_angle), a[2] + h};
    return {a, b};
  }

  void validate() const
  {
    for (Index n : shape) {
      if (n < 2 * margin + 3) {throw InvalidArgument("phantom shape too small for its margin");}
    }
    check_spacing(spacing);
    if (!(radius_top > 0.0 && radius_bottom > 0.0)) {throw InvalidArgument("phantom radius must be > 0");}
    if (!(period > 0.0)) {throw InvalidArgument("phantom period must be > 0");}
    if (!(background_std >= 0.0 && vessel_std >= 0.0)) {throw InvalidArgument("phantom noise std must be >= 0");}
    if (!(intensity_scale > 0.0)) {throw InvalidArgument("phantom intensity_scale must be > 0");}
    auto inside = [&](double x, double y, double z, double r) {
        const double lo = static_cast<double>(margin);
        return x - r >= lo && y - r >= lo && z - r >= lo - 1e-9 &&
               x + r <= static_cast<double>(shape[0] - 1 - margin) &&
               y + r <= static_cast<double>(shape[1] - 1 - margin) &&
               z + r <= static_cast<double>(shape[2] - 1 - margin) + 1e-9;
      };
    // The tube occupies slices [z_first, z_last] by construction; check its in-plane extent.
    for (Index k = z_first(); k <= z_last(); ++k) {
      const auto c = centerline_at(static_cast<double>(k));
      if (c[0] - radius_at(static_cast<double>(k)) < static_cast<double>(margin) ||
        c[1] - radius_at(static_cast<double>(k)) < static_cast<double>(margin) ||
        c[0] + radius_at(static_cast<double>(k)) > static_cast<double>(shape[0] - 1 - margin) ||
        c[1] + radius_at(static_cast<double>(k)) > static_cast<double>(shape[1] - 1 - margin))
      {
        throw InvalidArgument("phantom vessel leaves the volume at slice " + std::to_string(k));
      }
    }
    if (branch) {
      if (!(branch_radius > 0.0 && branch_length > 0.0)) {throw InvalidArgument("phantom branch must have positive size");}
      const auto [a, b] = branch_segment();
      if (!inside(b[0], b[1], b[2], branch_radius)) {throw InvalidArgument("phantom branch leaves the volume");}
    }
  }
};

namespace detail
{

inline double segment_distance(const Vec3 & p, const Vec3 & a, const Vec3 & b)
{
  const double d[3] = {b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  const double len2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
  double t = ((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1] + (p[2] - a[2]) * d[2]) / len2;
  t = std::clamp(t, 0.0, 1.0);
  const double e[3] = {p[0] - a[0] - t * d[0], p[1] - a[1] - t * d[1], p[2] - a[2] - t * d[2]};
  return std::sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2]);
}

}  // namespace detail

/// Binary vessel mask of a phantom; distances to the centreline are measured within each axial slice.
inline Volume phantom_label(const PhantomSpec & spec)
{
  spec.validate();
  const auto & s = spec.shape;
  std::vector<float> lab(static_cast<std::size_t>(product(s)), 0.0f);
  const auto seg = spec.branch_segment();
  for (Index i = 0; i < s[0]; ++i) {
    for (Index j = 0; j < s[1]; ++j) {
      for (Index k = 0; k < s[2]; ++k) {
        bool in = false;
        if (k >= spec.z_first() && k <= spec.z_last()) {
          const auto c = spec.centerline_at(static_cast<double>(k));
          const double dx = static_cast<double>(i) - c[0];
          const double dy = static_cast<double>(j) - c[1];
          in = std::sqrt(dx * dx + dy * dy) < spec.radius_at(static_cast<double>(k));
        }
        if (!in && spec.branch) {
          const Vec3 p{static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)};
          in = detail::segment_distance(p, seg.first, seg.second) < spec.branch_radius;
        }
        lab[static_cast<std::size_t>((i * s[1] + j) * s[2] + k)] = in ? 1.0f : 0.0f;
      }
    }
  }
  return Volume(s, spec.spacing, spec.origin, VolumeKind::label, std::move(lab));
}

/**
 * @brief Generate (image, label) for one phantom.
 *
 * Intensities are drawn per voxel from the background or vessel normal
 * distribution and rounded to integers, then scaled and offset.
 */
inline std::pair<Volume, Volume> generate_case(const PhantomSpec & spec, std::mt19937_64 & rng)
{
  Volume label = phantom_label(spec);
  std::normal_distribution<double> bg(spec.background_mean, spec.background_std);
  std::normal_distribution<double> fg(spec.vessel_mean, spec.vessel_std);
  std::vector<float> img(static_cast<std::size_t>(label.size()));
  for (Index v = 0; v < label.size(); ++v) {
    const double x = std::round(label[v] != 0.0f ? fg(rng) : bg(rng));
    img[v] = static_cast<float>(spec.intensity_scale * x + spec.intensity_offset);
  }
  Volume image(spec.shape, spec.spacing, spec.origin, VolumeKind::image, std::move(img));
  return {std::move(image), std::move(label)};
}

inline std::pair<Volume, Volume> generate_case(const PhantomSpec & spec)
{
  std::mt19937_64 rng(spec.seed);
  return generate_case(spec, rng);
}

/// Per-case geometry drawn from @p rng around the defaults of @p base.
inline PhantomSpec jittered_spec(const PhantomSpec & base, std::mt19937_64 & rng)
{
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto range = [&](double lo, double hi) {return lo + (hi - lo) * u(rng);};
  PhantomSpec s = base;
  const double scale = static_cast<double>(std::min(s.shape[0], s.shape[1])) / 64.0;
  s.center_offset = {range(-3.0, 3.0) * scale, range(-3.0, 3.0) * scale};
  s.amplitude = {range(0.0, 5.0) * scale, range(0.0, 5.0) * scale};
  s.period = range(0.8, 1.6) * static_cast<double>(s.shape[2]);
  s.phase = range(0.0, 2.0 * std::numbers::pi);
  s.radius_top = range(5.0, 6.5) * scale;
  s.radius_bottom = range(2.5, 3.5) * scale;
  s.branch = u(rng) < 0.5;
  s.branch_position = range(0.3, 0.5);
  s.branch_angle = range(0.0, 2.0 * std::numbers::pi);
  s.branch_length = range(10.0, 14.0) * scale;
  s.branch_radius = range(2.0, 2.8) * scale;
  s.seed = rng();
  return s;
}

struct PhantomDatasetOptions
{
  PhantomSpec base{};
  /// Fraction of cases exported with the +offset intensity shift.
  double offset_fraction = 0.0;
  double offset = 1024.0;
  Index folds = 5;
};

/**
 * @brief Write n phantom cases under @p out_dir plus a dataset.json with fold assignments.
 *
 * Layout: imagesTr/phantom_NNN.nii.gz, labelsTr/phantom_NNN.nii.gz.
 */
inline Datalist generate_dataset(
  Index n_cases, const fs::path & out_dir, std::uint64_t seed, const PhantomDatasetOptions & opt = {})
{
  if (n_cases < 1) {throw InvalidArgument("generate_dataset: n_cases must be >= 1");}
  if (!(opt.offset_fraction >= 0.0 && opt.offset_fraction <= 1.0)) {
    throw InvalidArgument("offset_fraction must be in [0, 1]");
  }
  std::mt19937_64 rng(seed);
  std::vector<PhantomSpec> specs;
  for (Index i = 0; i < n_cases; ++i) {specs.push_back(jittered_spec(opt.base, rng));}
  // Exactly round(fraction * n) cases get the offset, chosen by a seeded permutation.
  const auto n_offset = static_cast<Index>(std::lround(opt.offset_fraction * static_cast<double>(n_cases)));
  std::vector<Index> perm(static_cast<std::size_t>(n_cases));
  std::iota(perm.begin(), perm.end(), Index(0));
  for (Index i = n_cases - 1; i > 0; --i) {
    std::swap(perm[i], perm[static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1))]);
  }
  for (Index i = 0; i < n_offset; ++i) {specs[perm[i]].intensity_offset = opt.offset;}

  fs::create_directories(out_dir / "imagesTr");
  fs::create_directories(out_dir / "labelsTr");
  Datalist dl;
  std::vector<std::string> ids;
  for (Index i = 0; i < n_cases; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "phantom_%03lld", static_cast<long long>(i));
    auto [img, lab] = generate_case(specs[i]);
    DatalistEntry e;
    e.case_id = name;
    e.image = out_dir / "imagesTr" / (std::string(name) + ".nii.gz");
    e.label = out_dir / "labelsTr" / (std::string(name) + ".nii.gz");
    save_volume(img, e.image);
    save_volume(lab, e.label);
    dl.entries.push_back(std::move(e));
    ids.push_back(name);
  }
  if (n_cases >= opt.folds) {
    const auto folds = make_folds(ids, opt.folds, seed);
    for (Index i = 0; i < n_cases; ++i) {dl.entries[i].fold = folds[i];}
  }
  save_datalist(dl, out_dir / "dataset.json", out_dir);
  return dl;
}

}  // namespace aortaseg

#endif  // AORTASEG_PHANTOM_HPP_

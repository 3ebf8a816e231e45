#ifndef AORTASEG_VOLUME_HPP_
#define AORTASEG_VOLUME_HPP_

#include <algorithm>
#include <cmath>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "aortaseg/common.hpp"

namespace aortaseg
{

enum class VolumeKind : std::uint8_t
{
  image = 0,
  label = 1,
};

inline const char * to_string(VolumeKind k) {return k == VolumeKind::image ? "image" : "label";}

inline void check_spacing(const Vec3 & spacing, const char * what = "spacing")
{
  for (int a = 0; a < 3; ++a) {
    if (!(std::isfinite(spacing[a]) && spacing[a] > 0.0)) {
      throw InvalidArgument(
              std::string(what) + " component " + std::to_string(a) +
              " must be positive and finite, got " + std::to_string(spacing[a]));
    }
  }
}

/**
 * @brief Axis-aligned 3D scalar grid with physical spacing and origin.
 *
 * Axes are (x, y, z); storage is row-major over (x, y, z), so z varies fastest.
 * Label volumes hold non-negative integral class ids stored as float.
 * A Volume is immutable after construction.
 */
class Volume
{
public:
  Volume() = default;

  Volume(Shape3 shape, Vec3 spacing, Vec3 origin, VolumeKind kind, std::vector<float> data)
  : shape_(shape), spacing_(spacing), origin_(origin), kind_(kind), data_(std::move(data))
  {
    for (int a = 0; a < 3; ++a) {
      if (shape_[a] < 1) {
        throw ShapeError("volume axis " + std::to_string(a) + " has extent " +
                std::to_string(shape_[a]) + "; every axis must be >= 1");
      }
    }
    check_spacing(spacing_);
    for (double o : origin_) {
      if (!std::isfinite(o)) {throw InvalidArgument("origin must be finite");}
    }
    if (static_cast<Index>(data_.size()) != product(shape_)) {
      throw ShapeError("volume data has " + std::to_string(data_.size()) +
              " values but shape " + to_string(shape_) + " needs " +
              std::to_string(product(shape_)));
    }
    if (kind_ == VolumeKind::label) {
      for (float v : data_) {
        if (!(v >= 0.0f) || std::floor(v) != v) {
          throw InvalidArgument("label volume contains non-integral or negative value " +
                  std::to_string(v));
        }
      }
    }
  }

  static Volume filled(
    Shape3 shape, Vec3 spacing, Vec3 origin, VolumeKind kind, float value = 0.0f)
  {
    return Volume(shape, spacing, origin, kind,
             std::vector<float>(static_cast<std::size_t>(product(shape)), value));
  }

  /// Same geometry, new voxel values.
  Volume with_data(std::vector<float> data, VolumeKind kind) const
  {
    return Volume(shape_, spacing_, origin_, kind, std::move(data));
  }
  Volume with_data(std::vector<float> data) const {return with_data(std::move(data), kind_);}

  const Shape3 & shape() const noexcept {return shape_;}
  const Vec3 & spacing() const noexcept {return spacing_;}
  const Vec3 & origin() const noexcept {return origin_;}
  VolumeKind kind() const noexcept {return kind_;}
  Index size() const noexcept {return static_cast<Index>(data_.size());}
  std::span<const float> data() const noexcept {return data_;}
  const std::vector<float> & values() const noexcept {return data_;}

  Index index(Index i, Index j, Index k) const noexcept
  {
    return (i * shape_[1] + j) * shape_[2] + k;
  }
  float at(Index i, Index j, Index k) const noexcept {return data_[index(i, j, k)];}
  float operator[](Index linear) const noexcept {return data_[linear];}

  bool same_grid(const Volume & other, double tol = 1e-9) const
  {
    if (shape_ != other.shape_) {return false;}
    for (int a = 0; a < 3; ++a) {
      if (std::abs(spacing_[a] - other.spacing_[a]) > tol) {return false;}
    }
    return true;
  }

  /// Sorted distinct values (meant for label volumes).
  std::vector<float> distinct_values() const
  {
    std::set<float> s(data_.begin(), data_.end());
    return {s.begin(), s.end()};
  }

  bool is_binary() const
  {
    return std::all_of(data_.begin(), data_.end(),
             [](float v) {return v == 0.0f || v == 1.0f;});
  }

  Index count_nonzero() const
  {
    return std::count_if(data_.begin(), data_.end(), [](float v) {return v != 0.0f;});
  }

private:
  Shape3 shape_{1, 1, 1};
  Vec3 spacing_{1.0, 1.0, 1.0};
  Vec3 origin_{0.0, 0.0, 0.0};
  VolumeKind kind_ = VolumeKind::image;
  std::vector<float> data_ = std::vector<float>(1, 0.0f);
};

inline void require_same_grid(const Volume & a, const Volume & b, const char * what)
{
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) +
            " vs " + to_string(b.shape()));
  }
  if (!a.same_grid(b, 1e-6)) {
    throw ShapeError(std::string(what) + ": spacing mismatch");
  }
}

}  // namespace aortaseg

#endif  // AORTASEG_VOLUME_HPP_

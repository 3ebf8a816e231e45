#ifndef AORTASEG_TENSOR_HPP_
#define AORTASEG_TENSOR_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "aortaseg/common.hpp"

namespace aortaseg
{

/// Dense 5D buffer in (batch, channel, x, y, z) order, z fastest.
template<typename T>
class Tensor
{
public:
  using Shape = std::array<Index, 5>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
  : shape_(shape), data_(static_cast<std::size_t>(count(shape)), fill) {}
  Tensor(Shape shape, std::vector<T> data)
  : shape_(shape), data_(std::move(data))
  {
    if (static_cast<Index>(data_.size()) != count(shape_)) {
      throw ShapeError("tensor data size does not match shape " + shape_string(shape_));
    }
  }

  static Index count(const Shape & s) {return s[0] * s[1] * s[2] * s[3] * s[4];}

  static std::string shape_string(const Shape & s)
  {
    std::string out;
    for (int i = 0; i < 5; ++i) {
      if (i) {out += "x";}
      out += std::to_string(s[i]);
    }
    return out;
  }

  const Shape & shape() const noexcept {return shape_;}
  Index dim(int i) const noexcept {return shape_[i];}
  Index batch() const noexcept {return shape_[0];}
  Index channels() const noexcept {return shape_[1];}
  Shape3 spatial() const noexcept {return {shape_[2], shape_[3], shape_[4]};}
  Index spatial_size() const noexcept {return shape_[2] * shape_[3] * shape_[4];}
  Index numel() const noexcept {return static_cast<Index>(data_.size());}
  bool empty() const noexcept {return data_.empty();}

  T * data() noexcept {return data_.data();}
  const T * data() const noexcept {return data_.data();}
  std::vector<T> & vec() noexcept {return data_;}
  const std::vector<T> & vec() const noexcept {return data_;}

  T & operator[](Index i) noexcept {return data_[i];}
  const T & operator[](Index i) const noexcept {return data_[i];}

  Index offset(Index n, Index c, Index x, Index y, Index z) const noexcept
  {
    return (((n * shape_[1] + c) * shape_[2] + x) * shape_[3] + y) * shape_[4] + z;
  }
  T & at(Index n, Index c, Index x, Index y, Index z) noexcept {return data_[offset(n, c, x, y, z)];}
  const T & at(Index n, Index c, Index x, Index y, Index z) const noexcept
  {
    return data_[offset(n, c, x, y, z)];
  }

  /// Pointer to the first voxel of one (sample, channel) plane.
  T * channel(Index n, Index c) noexcept {return data_.data() + (n * shape_[1] + c) * spatial_size();}
  const T * channel(Index n, Index c) const noexcept
  {
    return data_.data() + (n * shape_[1] + c) * spatial_size();
  }

  void fill(T v) {std::fill(data_.begin(), data_.end(), v);}

  Tensor & operator+=(const Tensor & o)
  {
    if (o.shape_ != shape_) {
      throw ShapeError("tensor add: " + shape_string(shape_) + " vs " + shape_string(o.shape_));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) {data_[i] += o.data_[i];}
    return *this;
  }

  template<typename U>
  Tensor<U> cast() const
  {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

private:
  Shape shape_{0, 0, 0, 0, 0};
  std::vector<T> data_;
};

/// Numerically stable softmax over the channel axis.
template<typename T>
Tensor<T> softmax_channels(const Tensor<T> & logits)
{
  Tensor<T> out(logits.shape());
  const Index C = logits.channels();
  const Index S = logits.spatial_size();
  for (Index n = 0; n < logits.batch(); ++n) {
    for (Index v = 0; v < S; ++v) {
      T mx = logits.channel(n, 0)[v];
      for (Index c = 1; c < C; ++c) {mx = std::max(mx, logits.channel(n, c)[v]);}
      T sum = 0;
      for (Index c = 0; c < C; ++c) {
        const T e = std::exp(logits.channel(n, c)[v] - mx);
        out.channel(n, c)[v] = e;
        sum += e;
      }
      for (Index c = 0; c < C; ++c) {out.channel(n, c)[v] /= sum;}
    }
  }
  return out;
}

}  // namespace aortaseg

#endif  // AORTASEG_TENSOR_HPP_

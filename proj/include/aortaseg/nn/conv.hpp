#ifndef AORTASEG_NN_CONV_HPP_
#define AORTASEG_NN_CONV_HPP_

#include <Eigen/Core>

#include <algorithm>
#include <cstring>
#include <type_traits>
#include <vector>

#include "aortaseg/tensor.hpp"

namespace aortaseg::nn
{

/// Cubic-kernel convolution geometry shared by forward and transposed use.
struct ConvGeometry
{
  Index in_channels = 1;
  Index out_channels = 1;
  Index kernel = 3;
  Index stride = 1;
  Index pad = 1;

  Index patch() const noexcept {return in_channels * kernel * kernel * kernel;}

  Shape3 out_shape(const Shape3 & in) const
  {
    Shape3 out{};
    for (int a = 0; a < 3; ++a) {
      const Index span = in[a] + 2 * pad - kernel;
      if (span < 0) {
        throw ShapeError("convolution input extent " + std::to_string(in[a]) + " on axis " +
                std::to_string(a) + " is smaller than the kernel");
      }
      out[a] = span / stride + 1;
    }
    return out;
  }
};

namespace detail
{

template<typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template<typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template<typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

/// Number of output x-slices per im2col chunk, bounding the column buffer.
inline Index chunk_slices(Index rows, const Shape3 & out)
{
  constexpr Index kBudget = Index(1) << 22;
  const Index per_slice = std::max<Index>(1, rows * out[1] * out[2]);
  return std::clamp<Index>(kBudget / per_slice, 1, out[0]);
}

inline bool is_pointwise(const ConvGeometry & g)
{
  return g.kernel == 1 && g.stride == 1 && g.pad == 0;
}

template<typename T, bool Scatter>
void im2col_impl(
  std::conditional_t<Scatter, T *, const T *> x, const Shape3 & in, const ConvGeometry & g,
  const Shape3 & out, Index x0, Index x1, std::conditional_t<Scatter, const T *, T *> col)
{
  const Index k = g.kernel;
  const Index s = g.stride;
  const Index P = (x1 - x0) * out[1] * out[2];
  const Index plane = out[1] * out[2];
  Index row = 0;
  for (Index ci = 0; ci < g.in_channels; ++ci) {
    for (Index kx = 0; kx < k; ++kx) {
      for (Index ky = 0; ky < k; ++ky) {
        for (Index kz = 0; kz < k; ++kz, ++row) {
          auto r = col + row * P;
          Index p = 0;
          for (Index ox = x0; ox < x1; ++ox) {
            const Index ix = ox * s - g.pad + kx;
            if (ix < 0 || ix >= in[0]) {
              if constexpr (!Scatter) {std::fill(r + p, r + p + plane, T(0));}
              p += plane;
              continue;
            }
            for (Index oy = 0; oy < out[1]; ++oy, p += out[2]) {
              const Index iy = oy * s - g.pad + ky;
              if (iy < 0 || iy >= in[1]) {
                if constexpr (!Scatter) {std::fill(r + p, r + p + out[2], T(0));}
                continue;
              }
              auto src = x + ((ci * in[0] + ix) * in[1] + iy) * in[2];
              const Index base = kz - g.pad;
              if (s == 1) {
                const Index lo = std::min<Index>(std::max<Index>(0, -base), out[2]);
                const Index hi = std::max<Index>(lo, std::min<Index>(out[2], in[2] - base));
                if constexpr (Scatter) {
                  for (Index oz = lo; oz < hi; ++oz) {src[oz + base] += r[p + oz];}
                } else {
                  for (Index oz = 0; oz < lo; ++oz) {r[p + oz] = T(0);}
                  if (hi > lo) {std::memcpy(r + p + lo, src + lo + base, sizeof(T) * (hi - lo));}
                  for (Index oz = hi; oz < out[2]; ++oz) {r[p + oz] = T(0);}
                }
              } else {
                for (Index oz = 0; oz < out[2]; ++oz) {
                  const Index iz = oz * s + base;
                  const bool inside = iz >= 0 && iz < in[2];
                  if constexpr (Scatter) {
                    if (inside) {src[iz] += r[p + oz];}
                  } else {
                    r[p + oz] = inside ? src[iz] : T(0);
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

template<typename T>
void im2col(
  const T * x, const Shape3 & in, const ConvGeometry & g, const Shape3 & out,
  Index x0, Index x1, T * col)
{
  im2col_impl<T, false>(x, in, g, out, x0, x1, col);
}

template<typename T>
void col2im_add(
  const T * col, const Shape3 & in, const ConvGeometry & g, const Shape3 & out,
  Index x0, Index x1, T * dx)
{
  im2col_impl<T, true>(dx, in, g, out, x0, x1, col);
}

}  // namespace detail

/**
 * @brief y = conv(x, w) + b for every sample.
 *
 * @p weight is (out_channels x in_channels*k^3) row-major; @p bias may be null.
 */
template<typename T>
Tensor<T> conv_forward(
  const Tensor<T> & x, const std::vector<T> & weight, const T * bias, const ConvGeometry & g)
{
  if (x.channels() != g.in_channels) {
    throw ShapeError("conv expects " + std::to_string(g.in_channels) + " input channels, got " +
            std::to_string(x.channels()));
  }
  const Shape3 in = x.spatial();
  const Shape3 out = g.out_shape(in);
  const Index K = g.patch();
  const Index Co = g.out_channels;
  const Index So = out[0] * out[1] * out[2];
  const Index Si = x.spatial_size();
  Tensor<T> y({x.batch(), Co, out[0], out[1], out[2]});
  Eigen::Map<const detail::RowMat<T>> W(weight.data(), Co, K);

  if (detail::is_pointwise(g)) {
    for (Index n = 0; n < x.batch(); ++n) {
      Eigen::Map<const detail::RowMat<T>> X(x.channel(n, 0), K, Si);
      Eigen::Map<detail::RowMat<T>> Y(y.channel(n, 0), Co, So);
      Y.noalias() = W * X;
    }
  } else {
    const Index step = detail::chunk_slices(K, out);
    std::vector<T> col;
    for (Index n = 0; n < x.batch(); ++n) {
      for (Index x0 = 0; x0 < out[0]; x0 += step) {
        const Index x1 = std::min(out[0], x0 + step);
        const Index P = (x1 - x0) * out[1] * out[2];
        col.resize(static_cast<std::size_t>(K * P));
        detail::im2col(x.channel(n, 0), in, g, out, x0, x1, col.data());
        Eigen::Map<const detail::RowMat<T>> C(col.data(), K, P);
        detail::StridedMap<T> Y(
          y.channel(n, 0) + x0 * out[1] * out[2], Co, P, Eigen::OuterStride<>(So));
        Y.noalias() = W * C;
      }
    }
  }
  if (bias) {
    for (Index n = 0; n < x.batch(); ++n) {
      for (Index c = 0; c < Co; ++c) {
        T * p = y.channel(n, c);
        const T b = bias[c];
        for (Index v = 0; v < So; ++v) {p[v] += b;}
      }
    }
  }
  return y;
}

/// Gradient of conv_forward with respect to its input, for an input of spatial shape @p in.
template<typename T>
Tensor<T> conv_backward_data(
  const Tensor<T> & dy, const std::vector<T> & weight, const ConvGeometry & g, const Shape3 & in)
{
  const Shape3 out = g.out_shape(in);
  if (dy.spatial() != out || dy.channels() != g.out_channels) {
    throw ShapeError("conv_backward_data: gradient shape " + Tensor<T>::shape_string(dy.shape()) +
            " does not match the convolution output");
  }
  const Index K = g.patch();
  const Index Co = g.out_channels;
  const Index So = out[0] * out[1] * out[2];
  const Index Si = in[0] * in[1] * in[2];
  Tensor<T> dx({dy.batch(), g.in_channels, in[0], in[1], in[2]});
  Eigen::Map<const detail::RowMat<T>> W(weight.data(), Co, K);

  if (detail::is_pointwise(g)) {
    for (Index n = 0; n < dy.batch(); ++n) {
      Eigen::Map<const detail::RowMat<T>> DY(dy.channel(n, 0), Co, So);
      Eigen::Map<detail::RowMat<T>> DX(dx.channel(n, 0), K, Si);
      DX.noalias() = W.transpose() * DY;
    }
    return dx;
  }
  const Index step = detail::chunk_slices(K, out);
  std::vector<T> col;
  for (Index n = 0; n < dy.batch(); ++n) {
    for (Index x0 = 0; x0 < out[0]; x0 += step) {
      const Index x1 = std::min(out[0], x0 + step);
      const Index P = (x1 - x0) * out[1] * out[2];
      col.resize(static_cast<std::size_t>(K * P));
      detail::ConstStridedMap<T> DY(
        dy.channel(n, 0) + x0 * out[1] * out[2], Co, P, Eigen::OuterStride<>(So));
      Eigen::Map<detail::RowMat<T>> C(col.data(), K, P);
      C.noalias() = W.transpose() * DY;
      detail::col2im_add(col.data(), in, g, out, x0, x1, dx.channel(n, 0));
    }
  }
  return dx;
}

/// Accumulates the weight gradient of conv_forward into @p dweight.
template<typename T>
void conv_backward_weight(
  const Tensor<T> & x, const Tensor<T> & dy, const ConvGeometry & g, std::vector<T> & dweight)
{
  const Shape3 in = x.spatial();
  const Shape3 out = g.out_shape(in);
  const Index K = g.patch();
  const Index Co = g.out_channels;
  const Index So = out[0] * out[1] * out[2];
  Eigen::Map<detail::RowMat<T>> DW(dweight.data(), Co, K);

  if (detail::is_pointwise(g)) {
    for (Index n = 0; n < x.batch(); ++n) {
      Eigen::Map<const detail::RowMat<T>> X(x.channel(n, 0), K, So);
      Eigen::Map<const detail::RowMat<T>> DY(dy.channel(n, 0), Co, So);
      DW.noalias() += DY * X.transpose();
    }
    return;
  }
  const Index step = detail::chunk_slices(K, out);
  std::vector<T> col;
  for (Index n = 0; n < x.batch(); ++n) {
    for (Index x0 = 0; x0 < out[0]; x0 += step) {
      const Index x1 = std::min(out[0], x0 + step);
      const Index P = (x1 - x0) * out[1] * out[2];
      col.resize(static_cast<std::size_t>(K * P));
      detail::im2col(x.channel(n, 0), in, g, out, x0, x1, col.data());
      Eigen::Map<const detail::RowMat<T>> C(col.data(), K, P);
      detail::ConstStridedMap<T> DY(
        dy.channel(n, 0) + x0 * out[1] * out[2], Co, P, Eigen::OuterStride<>(So));
      DW.noalias() += DY * C.transpose();
    }
  }
}

/// Accumulates per-channel sums of @p dy into @p dbias.
template<typename T>
void bias_backward(const Tensor<T> & dy, std::vector<T> & dbias)
{
  const Index S = dy.spatial_size();
  for (Index n = 0; n < dy.batch(); ++n) {
    for (Index c = 0; c < dy.channels(); ++c) {
      const T * p = dy.channel(n, c);
      T acc = 0;
      for (Index v = 0; v < S; ++v) {acc += p[v];}
      dbias[c] += acc;
    }
  }
}

}  // namespace aortaseg::nn

#endif  // AORTASEG_NN_CONV_HPP_

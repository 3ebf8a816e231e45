#ifndef AORTASEG_NN_LAYERS_HPP_
#define AORTASEG_NN_LAYERS_HPP_

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "aortaseg/nn/conv.hpp"

namespace aortaseg::nn
{

/// Named parameter tensor. Non-trainable entries (batch-norm running statistics)
/// are saved with the model but never touched by the optimiser.
template<typename T>
struct Parameter
{
  std::string name;
  std::vector<T> value;
  std::vector<T> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, std::size_t size, T fill, bool train = true)
  : name(std::move(n)), value(size, fill), grad(train ? size : 0, T(0)), trainable(train) {}

  void zero_grad() {std::fill(grad.begin(), grad.end(), T(0));}
};

template<typename T>
using ParameterRefs = std::vector<Parameter<T> *>;

template<typename T>
void he_normal(std::vector<T> & w, Index fan_in, std::mt19937_64 & rng)
{
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto & v : w) {v = static_cast<T>(dist(rng));}
}

/// Cubic convolution, optionally strided, optionally with bias.
template<typename T>
class Conv3d
{
public:
  Conv3d() = default;
  Conv3d(
    const std::string & name, Index in_c, Index out_c, Index kernel, Index stride, bool bias,
    std::mt19937_64 & rng)
  : geom_{in_c, out_c, kernel, stride, kernel / 2},
    weight_(name + ".weight", static_cast<std::size_t>(out_c * in_c * kernel * kernel * kernel), T(0)),
    has_bias_(bias)
  {
    he_normal(weight_.value, geom_.patch(), rng);
    if (has_bias_) {bias_ = Parameter<T>(name + ".bias", static_cast<std::size_t>(out_c), T(0));}
  }

  Tensor<T> forward(const Tensor<T> & x, bool training)
  {
    if (training) {input_ = x;}
    return conv_forward(x, weight_.value, has_bias_ ? bias_.value.data() : nullptr, geom_);
  }

  Tensor<T> backward(const Tensor<T> & dy)
  {
    conv_backward_weight(input_, dy, geom_, weight_.grad);
    if (has_bias_) {bias_backward(dy, bias_.grad);}
    auto dx = conv_backward_data(dy, weight_.value, geom_, input_.spatial());
    input_ = Tensor<T>();
    return dx;
  }

  void collect(ParameterRefs<T> & out)
  {
    out.push_back(&weight_);
    if (has_bias_) {out.push_back(&bias_);}
  }

  const ConvGeometry & geometry() const noexcept {return geom_;}

private:
  ConvGeometry geom_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  bool has_bias_ = false;
  Tensor<T> input_;
};

/**
 * @brief Transposed convolution that exactly doubles each spatial extent.
 *
 * Realised as the adjoint of a stride-2, pad-1, 3x3x3 convolution from the
 * fine grid to the coarse grid, so the output has extent 2n for input extent n.
 */
template<typename T>
class ConvTranspose3d
{
public:
  ConvTranspose3d() = default;
  ConvTranspose3d(const std::string & name, Index in_c, Index out_c, std::mt19937_64 & rng)
  : adjoint_{out_c, in_c, 3, 2, 1},
    weight_(name + ".weight", static_cast<std::size_t>(in_c * out_c * 27), T(0)),
    bias_(name + ".bias", static_cast<std::size_t>(out_c), T(0))
  {
    he_normal(weight_.value, in_c * 27 / 8, rng);
  }

  Tensor<T> forward(const Tensor<T> & x, bool training)
  {
    if (training) {input_ = x;}
    const Shape3 s = x.spatial();
    Tensor<T> y = conv_backward_data(x, weight_.value, adjoint_, Shape3{2 * s[0], 2 * s[1], 2 * s[2]});
    const Index S = y.spatial_size();
    for (Index n = 0; n < y.batch(); ++n) {
      for (Index c = 0; c < y.channels(); ++c) {
        T * p = y.channel(n, c);
        for (Index v = 0; v < S; ++v) {p[v] += bias_.value[c];}
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T> & dy)
  {
    bias_backward(dy, bias_.grad);
    // The adjoint's weight gradient with roles of input and output swapped.
    conv_backward_weight(dy, input_, adjoint_, weight_.grad);
    auto dx = conv_forward(dy, weight_.value, static_cast<const T *>(nullptr), adjoint_);
    input_ = Tensor<T>();
    return dx;
  }

  void collect(ParameterRefs<T> & out)
  {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

private:
  ConvGeometry adjoint_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Tensor<T> input_;
};

/// Per-channel normalisation over batch and space with running statistics for evaluation.
template<typename T>
class BatchNorm3d
{
public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm3d() = default;
  BatchNorm3d(const std::string & name, Index channels)
  : gamma_(name + ".weight", static_cast<std::size_t>(channels), T(1)),
    beta_(name + ".bias", static_cast<std::size_t>(channels), T(0)),
    running_mean_(name + ".running_mean", static_cast<std::size_t>(channels), T(0), false),
    running_var_(name + ".running_var", static_cast<std::size_t>(channels), T(1), false) {}

  Tensor<T> forward(const Tensor<T> & x, bool training)
  {
    const Index C = x.channels();
    const Index S = x.spatial_size();
    const Index N = x.batch();
    const double M = static_cast<double>(N * S);
    Tensor<T> y(x.shape());
    if (training) {
      xhat_ = Tensor<T>(x.shape());
      invstd_.assign(static_cast<std::size_t>(C), T(0));
    }
    for (Index c = 0; c < C; ++c) {
      double mean;
      double var;
      if (training) {
        double sum = 0.0;
        for (Index n = 0; n < N; ++n) {
          const T * p = x.channel(n, c);
          for (Index v = 0; v < S; ++v) {sum += p[v];}
        }
        mean = sum / M;
        double ss = 0.0;
        for (Index n = 0; n < N; ++n) {
          const T * p = x.channel(n, c);
          for (Index v = 0; v < S; ++v) {
            const double d = p[v] - mean;
            ss += d * d;
          }
        }
        var = ss / M;
        const double unbiased = M > 1 ? ss / (M - 1) : var;
        running_mean_.value[c] = static_cast<T>((1 - kMomentum) * running_mean_.value[c] + kMomentum * mean);
        running_var_.value[c] = static_cast<T>((1 - kMomentum) * running_var_.value[c] + kMomentum * unbiased);
      } else {
        mean = running_mean_.value[c];
        var = running_var_.value[c];
      }
      const T inv = static_cast<T>(1.0 / std::sqrt(var + kEps));
      const T m = static_cast<T>(mean);
      const T g = gamma_.value[c];
      const T b = beta_.value[c];
      if (training) {invstd_[c] = inv;}
      for (Index n = 0; n < N; ++n) {
        const T * p = x.channel(n, c);
        T * q = y.channel(n, c);
        T * h = training ? xhat_.channel(n, c) : nullptr;
        for (Index v = 0; v < S; ++v) {
          const T xh = (p[v] - m) * inv;
          if (h) {h[v] = xh;}
          q[v] = g * xh + b;
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T> & dy)
  {
    const Index C = dy.channels();
    const Index S = dy.spatial_size();
    const Index N = dy.batch();
    const T M = static_cast<T>(N * S);
    Tensor<T> dx(dy.shape());
    for (Index c = 0; c < C; ++c) {
      double sum_dy = 0;
      double sum_dy_xh = 0;
      for (Index n = 0; n < N; ++n) {
        const T * g = dy.channel(n, c);
        const T * h = xhat_.channel(n, c);
        for (Index v = 0; v < S; ++v) {
          sum_dy += g[v];
          sum_dy_xh += g[v] * h[v];
        }
      }
      gamma_.grad[c] += static_cast<T>(sum_dy_xh);
      beta_.grad[c] += static_cast<T>(sum_dy);
      const T k = gamma_.value[c] * invstd_[c] / M;
      const T sdy = static_cast<T>(sum_dy);
      const T sdyxh = static_cast<T>(sum_dy_xh);
      for (Index n = 0; n < N; ++n) {
        const T * g = dy.channel(n, c);
        const T * h = xhat_.channel(n, c);
        T * o = dx.channel(n, c);
        for (Index v = 0; v < S; ++v) {
          o[v] = k * (M * g[v] - sdy - h[v] * sdyxh);
        }
      }
    }
    xhat_ = Tensor<T>();
    return dx;
  }

  void collect(ParameterRefs<T> & out)
  {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
  }

private:
  Parameter<T> gamma_;
  Parameter<T> beta_;
  Parameter<T> running_mean_;
  Parameter<T> running_var_;
  Tensor<T> xhat_;
  std::vector<T> invstd_;
};

template<typename T>
class ReLU
{
public:
  Tensor<T> forward(const Tensor<T> & x, bool training)
  {
    Tensor<T> y(x.shape());
    for (Index i = 0; i < x.numel(); ++i) {y[i] = x[i] > T(0) ? x[i] : T(0);}
    if (training) {output_ = y;}
    return y;
  }

  Tensor<T> backward(const Tensor<T> & dy)
  {
    Tensor<T> dx(dy.shape());
    for (Index i = 0; i < dy.numel(); ++i) {dx[i] = output_[i] > T(0) ? dy[i] : T(0);}
    output_ = Tensor<T>();
    return dx;
  }

private:
  Tensor<T> output_;
};

/// Pre-activation residual block: x + conv(relu(bn(conv(relu(bn(x)))))).
template<typename T>
class ResBlock
{
public:
  ResBlock() = default;
  ResBlock(const std::string & name, Index channels, std::mt19937_64 & rng)
  : bn1_(name + ".norm1", channels),
    conv1_(name + ".conv1", channels, channels, 3, 1, false, rng),
    bn2_(name + ".norm2", channels),
    conv2_(name + ".conv2", channels, channels, 3, 1, false, rng) {}

  Tensor<T> forward(const Tensor<T> & x, bool training)
  {
    auto h = bn1_.forward(x, training);
    h = act1_.forward(h, training);
    h = conv1_.forward(h, training);
    h = bn2_.forward(h, training);
    h = act2_.forward(h, training);
    h = conv2_.forward(h, training);
    h += x;
    return h;
  }

  Tensor<T> backward(const Tensor<T> & dy)
  {
    auto g = conv2_.backward(dy);
    g = act2_.backward(g);
    g = bn2_.backward(g);
    g = conv1_.backward(g);
    g = act1_.backward(g);
    g = bn1_.backward(g);
    g += dy;
    return g;
  }

  void collect(ParameterRefs<T> & out)
  {
    bn1_.collect(out);
    conv1_.collect(out);
    bn2_.collect(out);
    conv2_.collect(out);
  }

private:
  BatchNorm3d<T> bn1_;
  ReLU<T> act1_;
  Conv3d<T> conv1_;
  BatchNorm3d<T> bn2_;
  ReLU<T> act2_;
  Conv3d<T> conv2_;
};

}  // namespace aortaseg::nn

#endif  // AORTASEG_NN_LAYERS_HPP_

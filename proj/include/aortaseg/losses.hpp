#ifndef AORTASEG_LOSSES_HPP_
#define AORTASEG_LOSSES_HPP_

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "aortaseg/tensor.hpp"
#include "aortaseg/volume.hpp"

namespace aortaseg
{

struct LossConfig
{
  double focal_gamma = 2.0;
  double dice_smooth = 1e-5;
  /// Level 0 is the full-resolution output; truncated to the levels in use, then normalised.
  std::vector<double> ds_weights{1.0, 0.5, 0.25, 0.125};
  bool include_background_in_dice = true;

  void validate() const
  {
    if (!(focal_gamma >= 0.0)) {throw InvalidArgument("focal_gamma must be >= 0");}
    if (!(dice_smooth > 0.0)) {throw InvalidArgument("dice_smooth must be > 0");}
    if (ds_weights.empty()) {throw InvalidArgument("ds_weights must not be empty");}
    for (double w : ds_weights) {
      if (!(w > 0.0)) {throw InvalidArgument("ds_weights must all be > 0");}
    }
  }

  /// Normalised weights for @p levels outputs (full resolution plus levels - 1 coarser ones).
  std::vector<double> level_weights(std::size_t levels) const
  {
    if (levels > ds_weights.size()) {
      throw InvalidArgument("ds_weights has " + std::to_string(ds_weights.size()) +
              " entries but " + std::to_string(levels) + " output levels are in use");
    }
    std::vector<double> w(ds_weights.begin(), ds_weights.begin() + static_cast<std::ptrdiff_t>(levels));
    const double sum = std::accumulate(w.begin(), w.end(), 0.0);
    for (auto & v : w) {v /= sum;}
    return w;
  }
};

template<typename T>
struct LossResult
{
  T value = 0;
  Tensor<T> grad;
};

template<typename T>
struct TotalLossResult
{
  T value = 0;
  Tensor<T> dlogits;
  std::vector<Tensor<T>> dds;
  /// Unweighted dice + focal per level, level 0 first.
  std::vector<T> per_level;
};

namespace detail
{

template<typename T>
void check_loss_shapes(const Tensor<T> & logits, const Tensor<T> & target, const char * who)
{
  if (logits.shape() != target.shape()) {
    throw ShapeError(std::string(who) + ": logits " + Tensor<T>::shape_string(logits.shape()) +
            " and target " + Tensor<T>::shape_string(target.shape()) + " differ");
  }
  if (logits.channels() < 2) {throw ShapeError(std::string(who) + ": need at least 2 classes");}
}

/// g holds dL/dp; returns dL/dz through the channel softmax p.
template<typename T>
Tensor<T> softmax_backward(const Tensor<T> & p, const Tensor<T> & g)
{
  Tensor<T> dz(p.shape());
  const Index C = p.channels();
  const Index S = p.spatial_size();
  for (Index n = 0; n < p.batch(); ++n) {
    for (Index v = 0; v < S; ++v) {
      T dot = 0;
      for (Index c = 0; c < C; ++c) {dot += g.channel(n, c)[v] * p.channel(n, c)[v];}
      for (Index c = 0; c < C; ++c) {
        dz.channel(n, c)[v] = p.channel(n, c)[v] * (g.channel(n, c)[v] - dot);
      }
    }
  }
  return dz;
}

}  // namespace detail

/**
 * @brief Soft dice loss 1 - mean_c (2 sum p t + eps) / (sum p + sum t + eps).
 *
 * Sums run over the batch and all voxels; p is the channel softmax of the logits.
 */
template<typename T>
LossResult<T> dice_loss(const Tensor<T> & logits, const Tensor<T> & target, const LossConfig & cfg)
{
  detail::check_loss_shapes(logits, target, "dice_loss");
  const Tensor<T> p = softmax_channels(logits);
  const Index C = logits.channels();
  const Index S = logits.spatial_size();
  const Index c0 = cfg.include_background_in_dice ? 0 : 1;
  const T eps = static_cast<T>(cfg.dice_smooth);
  const T nclass = static_cast<T>(C - c0);

  LossResult<T> r;
  Tensor<T> g(p.shape());
  T mean_dice = 0;
  for (Index c = c0; c < C; ++c) {
    double inter = 0;
    double sum_p = 0;
    double sum_t = 0;
    for (Index n = 0; n < p.batch(); ++n) {
      const T * pc = p.channel(n, c);
      const T * tc = target.channel(n, c);
      for (Index v = 0; v < S; ++v) {
        inter += pc[v] * tc[v];
        sum_p += pc[v];
        sum_t += tc[v];
      }
    }
    const T num = static_cast<T>(2 * inter) + eps;
    const T den = static_cast<T>(sum_p + sum_t) + eps;
    mean_dice += num / den;
    // d(num/den)/dp = 2 t / den - num / den^2, scaled by -1/nclass.
    const T a = -2 / (den * nclass);
    const T b = num / (den * den * nclass);
    for (Index n = 0; n < p.batch(); ++n) {
      const T * tc = target.channel(n, c);
      T * gc = g.channel(n, c);
      for (Index v = 0; v < S; ++v) {gc[v] = a * tc[v] + b;}
    }
  }
  r.value = 1 - mean_dice / nclass;
  r.grad = detail::softmax_backward(p, g);
  return r;
}

/**
 * @brief Focal loss, mean over voxels of -sum_c t_c (1 - p_c)^gamma ln p_c.
 *
 * For one-hot targets this is -(1 - p_t)^gamma ln p_t; gamma = 0 gives cross-entropy.
 */
template<typename T>
LossResult<T> focal_loss(const Tensor<T> & logits, const Tensor<T> & target, const LossConfig & cfg)
{
  detail::check_loss_shapes(logits, target, "focal_loss");
  const Index C = logits.channels();
  const Index S = logits.spatial_size();
  const T gamma = static_cast<T>(cfg.focal_gamma);
  const T inv_count = T(1) / static_cast<T>(logits.batch() * S);

  LossResult<T> r;
  r.grad = Tensor<T>(logits.shape());
  std::vector<T> logp(static_cast<std::size_t>(C));
  std::vector<T> p(static_cast<std::size_t>(C));
  std::vector<T> w(static_cast<std::size_t>(C));
  double total = 0;
  for (Index n = 0; n < logits.batch(); ++n) {
    for (Index v = 0; v < S; ++v) {
      T mx = logits.channel(n, 0)[v];
      for (Index c = 1; c < C; ++c) {mx = std::max(mx, logits.channel(n, c)[v]);}
      T se = 0;
      for (Index c = 0; c < C; ++c) {se += std::exp(logits.channel(n, c)[v] - mx);}
      const T lse = mx + std::log(se);
      for (Index c = 0; c < C; ++c) {
        logp[c] = logits.channel(n, c)[v] - lse;
        p[c] = std::exp(logp[c]);
      }
      // w_c = t_c f'(p_c) p_c with f(p) = -(1-p)^gamma ln p.
      T wsum = 0;
      std::fill(w.begin(), w.end(), T(0));
      for (Index c = 0; c < C; ++c) {
        const T t = target.channel(n, c)[v];
        if (t == T(0)) {continue;}
        const T q = T(1) - p[c];
        const T mod = gamma == T(0) ? T(1) : std::pow(q, gamma);
        total += -t * mod * logp[c];
        T dfdp_times_p = -mod;
        if (gamma != T(0) && q > T(0)) {
          dfdp_times_p += gamma * std::pow(q, gamma - 1) * logp[c] * p[c];
        }
        w[c] = t * dfdp_times_p;
        wsum += w[c];
      }
      for (Index j = 0; j < C; ++j) {
        r.grad.channel(n, j)[v] = (w[j] - p[j] * wsum) * inv_count;
      }
    }
  }
  r.value = static_cast<T>(total) * inv_count;
  return r;
}

/// Nearest-neighbour downsampling of a one-hot target by an integer factor.
template<typename T>
Tensor<T> downsample_nearest(const Tensor<T> & target, Index factor)
{
  if (factor == 1) {return target;}
  const auto & s = target.shape();
  Tensor<T> out({s[0], s[1], s[2] / factor, s[3] / factor, s[4] / factor});
  for (Index n = 0; n < s[0]; ++n) {
    for (Index c = 0; c < s[1]; ++c) {
      for (Index x = 0; x < out.dim(2); ++x) {
        for (Index y = 0; y < out.dim(3); ++y) {
          for (Index z = 0; z < out.dim(4); ++z) {
            out.at(n, c, x, y, z) = target.at(n, c, x * factor, y * factor, z * factor);
          }
        }
      }
    }
  }
  return out;
}

/// Deep-supervision weighted sum of (dice + focal) over the full-resolution output and each DS head.
template<typename T>
TotalLossResult<T> total_loss(
  const Tensor<T> & logits, const std::vector<Tensor<T>> & ds_outputs, const Tensor<T> & target,
  const LossConfig & cfg)
{
  cfg.validate();
  const auto w = cfg.level_weights(ds_outputs.size() + 1);
  TotalLossResult<T> r;
  auto level = [&](const Tensor<T> & out, const Tensor<T> & tgt, T weight, Tensor<T> & grad) {
      auto d = dice_loss(out, tgt, cfg);
      auto f = focal_loss(out, tgt, cfg);
      const T v = d.value + f.value;
      r.per_level.push_back(v);
      r.value += weight * v;
      grad = Tensor<T>(out.shape());
      for (Index i = 0; i < grad.numel(); ++i) {grad[i] = weight * (d.grad[i] + f.grad[i]);}
    };
  level(logits, target, static_cast<T>(w[0]), r.dlogits);
  r.dds.resize(ds_outputs.size());
  for (std::size_t i = 0; i < ds_outputs.size(); ++i) {
    const Index factor = Index(1) << (i + 1);
    const Tensor<T> tgt = downsample_nearest(target, factor);
    if (tgt.shape() != ds_outputs[i].shape()) {
      throw ShapeError("total_loss: deep-supervision output " + std::to_string(i) +
              " has shape " + Tensor<T>::shape_string(ds_outputs[i].shape()) + ", expected " +
              Tensor<T>::shape_string(tgt.shape()));
    }
    level(ds_outputs[i], tgt, static_cast<T>(w[i + 1]), r.dds[i]);
  }
  return r;
}

/// One-hot encode a label volume as a (1, num_classes, x, y, z) tensor.
template<typename T>
Tensor<T> one_hot(const Volume & label, Index num_classes)
{
  const auto s = label.shape();
  Tensor<T> out({1, num_classes, s[0], s[1], s[2]});
  const Index S = label.size();
  for (Index v = 0; v < S; ++v) {
    const auto c = static_cast<Index>(label[v]);
    if (c < 0 || c >= num_classes) {
      throw InvalidArgument("label value " + std::to_string(c) + " outside [0, " +
              std::to_string(num_classes) + ")");
    }
    out.channel(0, c)[v] = T(1);
  }
  return out;
}

}  // namespace aortaseg

#endif  // AORTASEG_LOSSES_HPP_

#ifndef AORTASEG_OPTIM_HPP_
#define AORTASEG_OPTIM_HPP_

#include <cmath>
#include <numbers>
#include <vector>

#include "aortaseg/nn/layers.hpp"

namespace aortaseg
{

/// lr0 * (1 + cos(pi * step / total)) / 2. Steps past the end clamp to 0 with a warning.
inline double cosine_lr(Index step, Index total_steps, double lr0)
{
  if (total_steps < 1) {throw InvalidArgument("cosine_lr: total_steps must be >= 1");}
  if (step < 0) {throw InvalidArgument("cosine_lr: step must be >= 0");}
  if (step > total_steps) {
    warn("cosine_lr: step " + std::to_string(step) + " past schedule end " +
      std::to_string(total_steps) + "; using 0");
    return 0.0;
  }
  if (step == total_steps) {return 0.0;}
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

struct AdamWConfig
{
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

/// Adam with decoupled weight decay.
template<typename T>
class AdamW
{
public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  /// One update of every trainable parameter; @p grad_scale multiplies stored grads first.
  void step(const nn::ParameterRefs<T> & params, double lr, double grad_scale = 1.0)
  {
    if (m_.empty()) {
      for (auto * p : params) {
        m_.emplace_back(p->trainable ? p->value.size() : 0, 0.0);
        v_.emplace_back(p->trainable ? p->value.size() : 0, 0.0);
      }
    }
    if (m_.size() != params.size()) {throw InvalidArgument("AdamW: parameter list changed between steps");}
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto * p = params[i];
      if (!p->trainable) {continue;}
      auto & m = m_[i];
      auto & v = v_[i];
      for (std::size_t j = 0; j < p->value.size(); ++j) {
        const double g = static_cast<double>(p->grad[j]) * grad_scale;
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        const double w = p->value[j];
        p->value[j] = static_cast<T>(w - lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w));
      }
    }
  }

  Index steps_taken() const noexcept {return t_;}

private:
  AdamWConfig cfg_;
  Index t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace aortaseg

#endif  // AORTASEG_OPTIM_HPP_

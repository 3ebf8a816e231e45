#ifndef AORTASEG_PERCENTILE_HPP_
#define AORTASEG_PERCENTILE_HPP_

#include <algorithm>
#include <cmath>
#include <vector>

#include "aortaseg/common.hpp"

namespace aortaseg
{

/**
 * @brief Percentile with linear interpolation between order statistics.
 *
 * For n sorted values and p in [0, 100] the rank is h = (n - 1) p / 100 and the
 * result is x[floor(h)] + (h - floor(h)) (x[floor(h) + 1] - x[floor(h)]).
 * The input is reordered.
 */
template<typename T>
double percentile_inplace(std::vector<T> & values, double p)
{
  if (values.empty()) {throw InvalidArgument("percentile of an empty set");}
  if (!(p >= 0.0 && p <= 100.0)) {throw InvalidArgument("percentile must lie in [0, 100]");}
  const std::size_t n = values.size();
  const double h = static_cast<double>(n - 1) * p / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const double frac = h - static_cast<double>(lo);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double a = static_cast<double>(values[lo]);
  if (frac == 0.0 || lo + 1 >= n) {return a;}
  // The next order statistic is the minimum of the upper partition.
  const double b = static_cast<double>(
    *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo + 1), values.end()));
  return a + frac * (b - a);
}

template<typename T>
double percentile(std::vector<T> values, double p)
{
  return percentile_inplace(values, p);
}

}  // namespace aortaseg

#endif  // AORTASEG_PERCENTILE_HPP_

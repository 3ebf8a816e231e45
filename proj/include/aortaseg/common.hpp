#ifndef AORTASEG_COMMON_HPP_
#define AORTASEG_COMMON_HPP_

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>

namespace aortaseg
{

using Index = std::int64_t;
using Vec3 = std::array<double, 3>;
using Shape3 = std::array<Index, 3>;

/// Bad argument or violated precondition.
class InvalidArgument : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// Tensor or volume dimensions that do not fit together.
class ShapeError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// File missing, unreadable or malformed.
class IoError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Stage-1 segmentation produced nothing usable for intensity bounds.
class EmptyForeground : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Raised by the training loop when the loss stops being finite.
class NonFiniteLoss : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

using WarningHandler = std::function<void(const std::string &)>;

namespace detail
{
inline WarningHandler & warning_handler()
{
  static WarningHandler handler = [](const std::string & msg) {
      std::cerr << "aortaseg: warning: " << msg << '\n';
    };
  return handler;
}

inline std::mutex & warning_mutex()
{
  static std::mutex m;
  return m;
}
}  // namespace detail

/// Replace the process-wide warning sink. Returns the previous one.
inline WarningHandler set_warning_handler(WarningHandler handler)
{
  std::lock_guard lock(detail::warning_mutex());
  return std::exchange(detail::warning_handler(), std::move(handler));
}

inline void warn(const std::string & msg)
{
  std::lock_guard lock(detail::warning_mutex());
  if (detail::warning_handler()) {
    detail::warning_handler()(msg);
  }
}

/// RAII capture of warnings, mostly for tests.
class ScopedWarningCapture
{
public:
  explicit ScopedWarningCapture(std::function<void(const std::string &)> sink)
  : previous_(set_warning_handler(std::move(sink))) {}
  ~ScopedWarningCapture() {set_warning_handler(std::move(previous_));}
  ScopedWarningCapture(const ScopedWarningCapture &) = delete;
  ScopedWarningCapture & operator=(const ScopedWarningCapture &) = delete;

private:
  WarningHandler previous_;
};

inline Index product(const Shape3 & s) {return s[0] * s[1] * s[2];}

inline std::string to_string(const Shape3 & s)
{
  return std::to_string(s[0]) + "x" + std::to_string(s[1]) + "x" + std::to_string(s[2]);
}

/// Round half up, the pinned rounding rule for output shapes.
inline Index round_half_up(double x) {return static_cast<Index>(std::floor(x + 0.5));}

}  // namespace aortaseg

#endif  // AORTASEG_COMMON_HPP_

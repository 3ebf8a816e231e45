#ifndef AORTASEG_AORTASEG_HPP_
#define AORTASEG_AORTASEG_HPP_

#include "aortaseg/augment.hpp"
#include "aortaseg/checkpoint.hpp"
#include "aortaseg/common.hpp"
#include "aortaseg/config.hpp"
#include "aortaseg/infer.hpp"
#include "aortaseg/io.hpp"
#include "aortaseg/losses.hpp"
#include "aortaseg/mesh.hpp"
#include "aortaseg/metrics.hpp"
#include "aortaseg/normalize.hpp"
#include "aortaseg/optim.hpp"
#include "aortaseg/phantom.hpp"
#include "aortaseg/resample.hpp"
#include "aortaseg/segresnet.hpp"
#include "aortaseg/tensor.hpp"
#include "aortaseg/train.hpp"
#include "aortaseg/volume.hpp"

namespace aortaseg
{

inline constexpr const char * kVersion = "0.1.0";

}  // namespace aortaseg

#endif  // AORTASEG_AORTASEG_HPP_

#pragma once

#include "oct4d/random.hpp"
#include "oct4d/tensor.hpp"

namespace oct4d {

// Zero-mean normal draws with std `stddev`; draws with magnitude above
// 2 * stddev are redrawn.
template <typename T>
Tensor<T> init_truncated_normal(const Shape& shape, double stddev, Rng& rng);

template <typename T>
Tensor<T> init_truncated_normal(const Shape& shape, double stddev, std::uint64_t seed) {
  Rng rng(seed);
  return init_truncated_normal<T>(shape, stddev, rng);
}

}  // namespace oct4d

#include "oct4d/init.hpp"

#include <stdexcept>

namespace oct4d {

template <typename T>
Tensor<T> init_truncated_normal(const Shape& shape, double stddev, Rng& rng) {
  if (!(stddev > 0)) throw std::invalid_argument("truncated normal stddev must be positive");
  Tensor<T> out(shape);
  const double bound = 2.0 * stddev;
  for (auto& v : out.data()) {
    double draw = rng.normal() * stddev;
    while (std::abs(draw) > bound) draw = rng.normal() * stddev;
    v = static_cast<T>(draw);
  }
  return out;
}

template Tensor<float> init_truncated_normal(const Shape&, double, Rng&);
template Tensor<double> init_truncated_normal(const Shape&, double, Rng&);

}  // namespace oct4d

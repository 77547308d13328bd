#pragma once

#include <vector>

#include "oct4d/autograd.hpp"

namespace oct4d {

// Convolution geometry. Kernels are laid out as [k_1, ..., k_N, c_in, c_out]
// and inputs as [batch, a_1, ..., a_N, c_in].
//
// All convolutions here are cross-correlations (no kernel flip) with SAME
// zero padding: output extent is ceil(in / stride) and the padding before an
// axis is floor(total / 2). When `leading_temporal` is set the first kernel
// axis is time, which is never strided.
struct ConvSpec {
  std::vector<int> kernel;
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  int stride = 1;
  bool leading_temporal = false;

  int axes() const { return static_cast<int>(kernel.size()); }
  // Throws std::invalid_argument on even or non-positive extents, bad
  // channel counts or a stride outside {1, 2}.
  void validate() const;
  Shape weight_shape() const;
  std::int64_t weight_count() const;

  // Full k^4 convolution over (time, h, w, d).
  static ConvSpec full4d(int k, std::int64_t cin, std::int64_t cout, int stride = 1);
};

struct SamePadding {
  std::int64_t out = 0;
  std::int64_t before = 0;
};
SamePadding same_padding(std::int64_t in, int kernel, int stride);

// Direct nested-sum evaluation; the oracle for every faster path. Supports
// N in {2, 3, 4}. Not differentiable.
template <typename T>
Tensor<T> conv_nd_reference(const Tensor<T>& x, const Tensor<T>& weight, const ConvSpec& spec);

// Differentiable convolution for N in {2, 3, 4}. Every rank is evaluated as a
// loop over temporal kernel slices and input frames of 3D convolutions, each
// lowered to one GEMM per frame.
template <typename T>
Var<T> conv(const Var<T>& x, const Var<T>& weight, const ConvSpec& spec);

// x [b, p, h, w, d, c_in], weight [k_t, k_h, k_w, k_d, c_in, c_out]; output
// frame j accumulates Conv3D(weight(i), x(j + i - (k_t - 1) / 2)).
template <typename T>
Var<T> conv4d_via_3d(const Var<T>& x, const Var<T>& weight, int stride = 1);

// x [b, h, w, d, c_in], weight [k_h, k_w, k_d, c_in, c_out].
template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& weight, int stride = 1);

// x [b, h, w, c_in], weight [k_h, k_w, c_in, c_out].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, int stride = 1);

// Spatial-only kernel [1, k_h, k_w, k_d, c_in, c_out] followed by a
// temporal-only kernel [k_t, 1, 1, 1, c_out, c_out]; the stride applies to the
// spatial convolution. Inputs are rank 6 like conv4d_via_3d.
template <typename T>
Var<T> factorized_conv(const Var<T>& x, const Var<T>& spatial, const Var<T>& temporal, int stride = 1);

}  // namespace oct4d

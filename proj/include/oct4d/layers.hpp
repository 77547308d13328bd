#pragma once

#include <optional>
#include <string>
#include <vector>

#include "oct4d/autograd.hpp"
#include "oct4d/conv.hpp"
#include "oct4d/random.hpp"

namespace oct4d {

template <typename T>
struct NamedVar {
  std::string name;
  Var<T> var;
};

// Every trainable tensor appears once in `params`; non-trainable state that
// must survive a checkpoint (batch-norm running statistics) sits in `buffers`.
template <typename T>
struct Registry {
  std::vector<NamedVar<T>> params;
  std::vector<NamedVar<T>> buffers;

  void param(std::string name, Var<T> v) { params.push_back({std::move(name), std::move(v)}); }
  void buffer(std::string name, Var<T> v) { buffers.push_back({std::move(name), std::move(v)}); }
  std::int64_t param_count() const;
};

struct InitContext {
  Rng rng;
  double stddev = 0.01;
};

template <typename T>
Var<T> make_param(const Shape& shape, InitContext& init);

// ---- batch normalization ----------------------------------------------------

template <typename T>
struct BatchNormState {
  Var<T> gamma;
  Var<T> beta;
  Var<T> running_mean;
  Var<T> running_var;
  T momentum = T(0.9);
  T eps = T(1e-5);

  static BatchNormState make(std::int64_t channels, T gamma0 = T{1});
  void collect(const std::string& prefix, Registry<T>& reg) const;
};

// Channel axis last. Training mode normalizes with batch statistics over all
// other axes and folds them into the running statistics:
// running = momentum * running + (1 - momentum) * batch (biased variance).
// Inference mode uses the running statistics.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Var<T>& running_mean,
                  Var<T>& running_var, T momentum, T eps, bool training);

// While alive, training-mode batch norm uses `momentum` in place of each
// layer's own value. Nested scopes restore the outer value on exit.
class BatchNormMomentumScope {
 public:
  explicit BatchNormMomentumScope(double momentum);
  ~BatchNormMomentumScope();
  BatchNormMomentumScope(const BatchNormMomentumScope&) = delete;
  BatchNormMomentumScope& operator=(const BatchNormMomentumScope&) = delete;

 private:
  double previous_;
};

template <typename T>
Var<T> batch_norm(const Var<T>& x, BatchNormState<T>& state, bool training) {
  return batch_norm(x, state.gamma, state.beta, state.running_mean, state.running_var, state.momentum, state.eps,
                    training);
}

// ---- convolution units on (batch, time, h, w, d, channel) tensors ------------

// Kernel extents along (time, h, w, d). Degenerate axes use extent 1.
struct KernelLayout {
  int kt = 1;
  int kh = 3;
  int kw = 3;
  int kd = 3;

  std::int64_t spatial_taps() const { return static_cast<std::int64_t>(kh) * kw * kd; }
  std::int64_t taps() const { return kt * spatial_taps(); }
};

enum class ConvKind { full4d, fac4d, conv3d, conv2d };

KernelLayout kernel_layout(ConvKind kind, int k = 3);
bool is_factorized(ConvKind kind);

// A full convolution, or a spatial-then-temporal factorized pair.
template <typename T>
class ConvUnit {
 public:
  ConvUnit() = default;
  ConvUnit(KernelLayout layout, std::int64_t cin, std::int64_t cout, int stride, bool factorized, InitContext& init);

  Var<T> forward(const Var<T>& x) const;
  void collect(const std::string& prefix, Registry<T>& reg) const;

  // Full: k_t k_h k_w k_d c_in c_out. Factorized: k_h k_w k_d c_in c_out + k_t c_out c_out.
  static std::int64_t weight_count(KernelLayout layout, std::int64_t cin, std::int64_t cout, bool factorized);

  const Var<T>& weight() const { return weight_; }
  const Var<T>& temporal_weight() const { return temporal_; }
  bool factorized() const { return factorized_; }

 private:
  ConvSpec spec_;
  bool factorized_ = false;
  int stride_ = 1;
  Var<T> weight_;
  Var<T> temporal_;
};

// Pre-activation residual block:
//   a = relu(bn1(x)); r = conv2(relu(bn2(conv1(a))))
//   out = r + (projection(a) if stride 2 or channels change, else x)
// The projection is a 1x1x1x1 convolution with the block's stride.
template <typename T>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(KernelLayout layout, std::int64_t cin, std::int64_t cout, int stride, bool factorized,
                InitContext& init);

  Var<T> forward(const Var<T>& x, bool training);
  void collect(const std::string& prefix, Registry<T>& reg) const;
  bool has_projection() const { return projection_.defined(); }

  ConvUnit<T>& conv1() { return conv1_; }
  ConvUnit<T>& conv2() { return conv2_; }

 private:
  BatchNormState<T> bn1_;
  BatchNormState<T> bn2_;
  ConvUnit<T> conv1_;
  ConvUnit<T> conv2_;
  Var<T> projection_;
  int stride_ = 1;
};

// Convenience form of a single residual block for a given convolution kind.
template <typename T>
ResidualBlock<T> residual_block(ConvKind kind, std::int64_t cin, std::int64_t cout, int stride, InitContext& init);

enum class PoolAxes { spatial, temporal_spatial };

// x [b, t, s..., c]. spatial -> [b, t, c]; temporal_spatial -> [b, c].
template <typename T>
Var<T> global_avg_pool(const Var<T>& x, PoolAxes axes);

// Scalar regression head: [b, c] -> [b, 1].
template <typename T>
struct DenseHead {
  Var<T> weight;
  Var<T> bias;

  static DenseHead make(std::int64_t channels, InitContext& init);
  Var<T> forward(const Var<T>& x) const;
  void collect(const std::string& prefix, Registry<T>& reg) const;
};

}  // namespace oct4d

#include "oct4d/layers.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "oct4d/init.hpp"
#include "oct4d/ops.hpp"

namespace oct4d {

template <typename T>
std::int64_t Registry<T>::param_count() const {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.var.value().size();
  return n;
}

template <typename T>
Var<T> make_param(const Shape& shape, InitContext& init) {
  return Var<T>(init_truncated_normal<T>(shape, init.stddev, init.rng), true);
}

// ---- batch normalization ----------------------------------------------------

template <typename T>
BatchNormState<T> BatchNormState<T>::make(std::int64_t channels, T gamma0) {
  BatchNormState s;
  s.gamma = Var<T>(Tensor<T>(Shape{channels}, gamma0), true);
  s.beta = Var<T>(Tensor<T>(Shape{channels}, T{0}), true);
  s.running_mean = Var<T>(Tensor<T>(Shape{channels}, T{0}));
  s.running_var = Var<T>(Tensor<T>(Shape{channels}, T{1}));
  return s;
}

template <typename T>
void BatchNormState<T>::collect(const std::string& prefix, Registry<T>& reg) const {
  reg.param(prefix + ".gamma", gamma);
  reg.param(prefix + ".beta", beta);
  reg.buffer(prefix + ".running_mean", running_mean);
  reg.buffer(prefix + ".running_var", running_var);
}

namespace {
// NaN: no override.
thread_local double g_momentum_override = std::numeric_limits<double>::quiet_NaN();
}  // namespace

BatchNormMomentumScope::BatchNormMomentumScope(double momentum) : previous_(g_momentum_override) {
  if (!(momentum >= 0 && momentum <= 1)) throw std::invalid_argument("batch-norm momentum must lie in [0, 1]");
  g_momentum_override = momentum;
}

BatchNormMomentumScope::~BatchNormMomentumScope() { g_momentum_override = previous_; }

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Var<T>& running_mean,
                  Var<T>& running_var, T momentum, T eps, bool training) {
  const std::int64_t c = x.shape().back();
  if (gamma.value().size() != c || beta.value().size() != c || running_mean.value().size() != c ||
      running_var.value().size() != c) {
    throw std::invalid_argument("batch_norm parameters do not match channel count of " + shape_str(x.shape()));
  }
  if (training && x.shape().front() < 2) {
    throw std::invalid_argument("batch_norm in training mode needs batch size >= 2, got " + shape_str(x.shape()));
  }
  const std::int64_t m = x.value().size() / c;
  const T* px = x.value().ptr();
  std::vector<T> mu(static_cast<std::size_t>(c), T{0});
  std::vector<T> inv(static_cast<std::size_t>(c), T{0});
  if (training) {
    std::vector<double> sum(static_cast<std::size_t>(c), 0.0);
    for (std::int64_t r = 0; r < m; ++r) {
      for (std::int64_t k = 0; k < c; ++k) sum[static_cast<std::size_t>(k)] += px[r * c + k];
    }
    std::vector<double> sq(static_cast<std::size_t>(c), 0.0);
    for (std::int64_t k = 0; k < c; ++k) mu[static_cast<std::size_t>(k)] = static_cast<T>(sum[static_cast<std::size_t>(k)] / static_cast<double>(m));
    for (std::int64_t r = 0; r < m; ++r) {
      for (std::int64_t k = 0; k < c; ++k) {
        const double d = static_cast<double>(px[r * c + k]) - mu[static_cast<std::size_t>(k)];
        sq[static_cast<std::size_t>(k)] += d * d;
      }
    }
    if (!std::isnan(g_momentum_override)) momentum = static_cast<T>(g_momentum_override);
    T* rm = running_mean.mutable_value().ptr();
    T* rv = running_var.mutable_value().ptr();
    for (std::int64_t k = 0; k < c; ++k) {
      const auto s = static_cast<std::size_t>(k);
      const T var = static_cast<T>(sq[s] / static_cast<double>(m));
      inv[s] = T{1} / std::sqrt(var + eps);
      rm[k] = momentum * rm[k] + (T{1} - momentum) * mu[s];
      rv[k] = momentum * rv[k] + (T{1} - momentum) * var;
    }
  } else {
    const T* rm = running_mean.value().ptr();
    const T* rv = running_var.value().ptr();
    for (std::int64_t k = 0; k < c; ++k) {
      mu[static_cast<std::size_t>(k)] = rm[k];
      inv[static_cast<std::size_t>(k)] = T{1} / std::sqrt(rv[k] + eps);
    }
  }

  Tensor<T> xhat(x.shape());
  Tensor<T> out(x.shape());
  const T* g = gamma.value().ptr();
  const T* b = beta.value().ptr();
  for (std::int64_t r = 0; r < m; ++r) {
    for (std::int64_t k = 0; k < c; ++k) {
      const auto s = static_cast<std::size_t>(k);
      const T h = (px[r * c + k] - mu[s]) * inv[s];
      xhat[r * c + k] = h;
      out[r * c + k] = g[k] * h + b[k];
    }
  }

  return Var<T>::from_op(std::move(out), {x, gamma, beta},
                         [xhat = std::move(xhat), inv, m, c, training](Node<T>& self) {
                           Node<T>& nx = *self.parents[0];
                           Node<T>& ng = *self.parents[1];
                           Node<T>& nb = *self.parents[2];
                           const T* gout = self.grad.ptr();
                           std::vector<T> sum_g(static_cast<std::size_t>(c), T{0});
                           std::vector<T> sum_gx(static_cast<std::size_t>(c), T{0});
                           for (std::int64_t r = 0; r < m; ++r) {
                             for (std::int64_t k = 0; k < c; ++k) {
                               sum_g[static_cast<std::size_t>(k)] += gout[r * c + k];
                               sum_gx[static_cast<std::size_t>(k)] += gout[r * c + k] * xhat[r * c + k];
                             }
                           }
                           if (ng.requires_grad) {
                             T* gg = ng.grad_buffer().ptr();
                             for (std::int64_t k = 0; k < c; ++k) gg[k] += sum_gx[static_cast<std::size_t>(k)];
                           }
                           if (nb.requires_grad) {
                             T* gb = nb.grad_buffer().ptr();
                             for (std::int64_t k = 0; k < c; ++k) gb[k] += sum_g[static_cast<std::size_t>(k)];
                           }
                           if (!nx.requires_grad) return;
                           T* gx = nx.grad_buffer().ptr();
                           const T* gam = ng.value.ptr();
                           const T mt = static_cast<T>(m);
                           for (std::int64_t r = 0; r < m; ++r) {
                             for (std::int64_t k = 0; k < c; ++k) {
                               const auto s = static_cast<std::size_t>(k);
                               const T scale = gam[k] * inv[s];
                               if (training) {
                                 gx[r * c + k] +=
                                     scale / mt * (mt * gout[r * c + k] - sum_g[s] - xhat[r * c + k] * sum_gx[s]);
                               } else {
                                 gx[r * c + k] += scale * gout[r * c + k];
                               }
                             }
                           }
                         });
}

// ---- convolution units ------------------------------------------------------

KernelLayout kernel_layout(ConvKind kind, int k) {
  switch (kind) {
    case ConvKind::full4d:
    case ConvKind::fac4d:
      return {k, k, k, k};
    case ConvKind::conv3d:
      return {1, k, k, k};
    case ConvKind::conv2d:
      return {1, k, k, 1};
  }
  throw std::invalid_argument("unknown conv kind");
}

bool is_factorized(ConvKind kind) { return kind == ConvKind::fac4d; }

template <typename T>
ConvUnit<T>::ConvUnit(KernelLayout layout, std::int64_t cin, std::int64_t cout, int stride, bool factorized,
                      InitContext& init)
    : factorized_(factorized), stride_(stride) {
  if (factorized) {
    if (layout.kt < 2) throw std::invalid_argument("factorized convolution needs a temporal kernel extent > 1");
    weight_ = make_param<T>(Shape{1, layout.kh, layout.kw, layout.kd, cin, cout}, init);
    temporal_ = make_param<T>(Shape{layout.kt, 1, 1, 1, cout, cout}, init);
  } else {
    spec_ = ConvSpec{{layout.kt, layout.kh, layout.kw, layout.kd}, cin, cout, stride, true};
    spec_.validate();
    weight_ = make_param<T>(spec_.weight_shape(), init);
  }
}

template <typename T>
Var<T> ConvUnit<T>::forward(const Var<T>& x) const {
  if (factorized_) return factorized_conv(x, weight_, temporal_, stride_);
  return conv(x, weight_, spec_);
}

template <typename T>
void ConvUnit<T>::collect(const std::string& prefix, Registry<T>& reg) const {
  if (factorized_) {
    reg.param(prefix + ".spatial", weight_);
    reg.param(prefix + ".temporal", temporal_);
  } else {
    reg.param(prefix + ".weight", weight_);
  }
}

template <typename T>
std::int64_t ConvUnit<T>::weight_count(KernelLayout layout, std::int64_t cin, std::int64_t cout, bool factorized) {
  if (factorized) return layout.spatial_taps() * cin * cout + layout.kt * cout * cout;
  return layout.taps() * cin * cout;
}

template <typename T>
ResidualBlock<T>::ResidualBlock(KernelLayout layout, std::int64_t cin, std::int64_t cout, int stride,
                                bool factorized, InitContext& init)
    : bn1_(BatchNormState<T>::make(cin)),
      bn2_(BatchNormState<T>::make(cout)),
      conv1_(layout, cin, cout, stride, factorized, init),
      conv2_(layout, cout, cout, 1, factorized, init),
      stride_(stride) {
  if (stride != 1 || cin != cout) projection_ = make_param<T>(Shape{1, 1, 1, 1, cin, cout}, init);
}

template <typename T>
Var<T> ResidualBlock<T>::forward(const Var<T>& x, bool training) {
  Var<T> a = relu(batch_norm(x, bn1_, training));
  Var<T> r = conv1_.forward(a);
  r = conv2_.forward(relu(batch_norm(r, bn2_, training)));
  Var<T> shortcut = x;
  if (projection_.defined()) {
    const Shape& ps = projection_.shape();
    shortcut = conv(a, projection_, ConvSpec{{1, 1, 1, 1}, ps[4], ps[5], stride_, true});
  }
  return add(r, shortcut);
}

template <typename T>
void ResidualBlock<T>::collect(const std::string& prefix, Registry<T>& reg) const {
  bn1_.collect(prefix + ".bn1", reg);
  conv1_.collect(prefix + ".conv1", reg);
  bn2_.collect(prefix + ".bn2", reg);
  conv2_.collect(prefix + ".conv2", reg);
  if (projection_.defined()) reg.param(prefix + ".projection", projection_);
}

template <typename T>
ResidualBlock<T> residual_block(ConvKind kind, std::int64_t cin, std::int64_t cout, int stride, InitContext& init) {
  return ResidualBlock<T>(kernel_layout(kind), cin, cout, stride, is_factorized(kind), init);
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x, PoolAxes axes) {
  const int rank = x.value().rank();
  if (rank < 3) throw std::invalid_argument("global_avg_pool needs [b, ..., c], got " + shape_str(x.shape()));
  if (axes == PoolAxes::temporal_spatial) return mean_axes(x, 1, rank - 2);
  if (rank < 4) throw std::invalid_argument("spatial pooling needs [b, t, s..., c], got " + shape_str(x.shape()));
  return mean_axes(x, 2, rank - 2);
}

template <typename T>
DenseHead<T> DenseHead<T>::make(std::int64_t channels, InitContext& init) {
  DenseHead h;
  h.weight = make_param<T>(Shape{channels, 1}, init);
  h.bias = Var<T>(Tensor<T>(Shape{1}, T{0}), true);
  return h;
}

template <typename T>
Var<T> DenseHead<T>::forward(const Var<T>& x) const {
  return dense(x, weight, bias);
}

template <typename T>
void DenseHead<T>::collect(const std::string& prefix, Registry<T>& reg) const {
  reg.param(prefix + ".weight", weight);
  reg.param(prefix + ".bias", bias);
}

#define OCT4D_INSTANTIATE_LAYERS(T)                                                                         \
  template struct Registry<T>;                                                                              \
  template Var<T> make_param(const Shape&, InitContext&);                                                   \
  template struct BatchNormState<T>;                                                                        \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, Var<T>&, Var<T>&, T, T, bool);   \
  template class ConvUnit<T>;                                                                               \
  template class ResidualBlock<T>;                                                                          \
  template ResidualBlock<T> residual_block(ConvKind, std::int64_t, std::int64_t, int, InitContext&);        \
  template Var<T> global_avg_pool(const Var<T>&, PoolAxes);                                                 \
  template struct DenseHead<T>;

OCT4D_INSTANTIATE_LAYERS(float)
OCT4D_INSTANTIATE_LAYERS(double)

}  // namespace oct4d
